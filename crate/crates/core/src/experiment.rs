//! Multi-seed experiments and their run directories.
//!
//! ```text
//! <out>/config.toml
//! <out>/seed-0003/plan.json
//! <out>/seed-0003/step-000/{model.json, memory.json, rng.json, metrics.json}
//! <out>/seed-0003/upper-bound.json
//! <out>/seed-0003/failure.json        (only when the run failed)
//! <out>/report.json
//! <out>/curve.csv
//! ```
//!
//! `metrics.json` is written last, so a step directory without it is treated
//! as incomplete and redone on resume.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, ExperimentConfig};
use crate::data::{
    load_cifar_binary, load_csv, make_class_splits, synthetic_gaussian_dataset, Augmenter,
    ClassSplitPlan, Dataset, Normalizer, Split, SplitDataset,
};
use crate::error::{Error, Result};
use crate::eval::{aggregate, curve_csv, mean_std, Aggregate, RunFailure, RunReport, StepMetrics};
use crate::memory::{MemoryManifest, RepresentativeMemory};
use crate::model::{ClassId, IncrementalNet};
use crate::pipeline::{incremental_step, upper_bound, EpochEvent, IncrementalState, Phase, StepConfig, StepContext};

/// Progress notifications, delivered from worker threads.
#[derive(Debug, Clone, PartialEq)]
pub enum Progress {
    Epoch {
        seed: u64,
        step: usize,
        phase: Phase,
        epoch: usize,
        lr: f64,
        loss: f64,
    },
    Step {
        seed: u64,
        step: usize,
        classes_seen: usize,
        accuracy: f64,
        old_accuracy: Option<f64>,
        new_accuracy: Option<f64>,
    },
    Resumed {
        seed: u64,
        next_step: usize,
    },
    UpperBound {
        seed: u64,
        accuracy: f64,
    },
    Failed {
        seed: u64,
        message: String,
    },
}

pub type ProgressFn = Arc<dyn Fn(&Progress) + Send + Sync>;

#[derive(Clone, Default)]
pub struct RunOptions {
    /// Where to write the run directory; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    pub resume: bool,
    /// Worker threads for independent seeds; 0 lets rayon decide.
    pub threads: usize,
    /// Stop every seed after this step index, as if interrupted.
    pub stop_after_step: Option<usize>,
    pub progress: Option<ProgressFn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAccuracy {
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundSummary {
    pub per_seed: Vec<SeedAccuracy>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub config_digest: String,
    pub runs: Vec<RunReport>,
    pub failures: Vec<RunFailure>,
    pub aggregate: Aggregate,
    pub upper_bound: Option<UpperBoundSummary>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Complete(ExperimentReport),
    /// Stopped by [`RunOptions::stop_after_step`].
    Interrupted,
}

impl RunOutcome {
    pub fn report(self) -> Option<ExperimentReport> {
        match self {
            RunOutcome::Complete(r) => Some(r),
            RunOutcome::Interrupted => None,
        }
    }
}

/// Training data in raw form, test data normalized.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub normalizer: Normalizer,
    pub augmenter: Augmenter,
    pub classes: Vec<ClassId>,
}

pub fn load_dataset(config: &DatasetConfig) -> Result<SplitDataset> {
    match config {
        DatasetConfig::Synthetic { .. } => {
            synthetic_gaussian_dataset(&config.synthetic_spec().expect("synthetic"))
        }
        DatasetConfig::Csv { train, test } => {
            SplitDataset::new(load_csv(train, Split::Train)?, load_csv(test, Split::Test)?)
        }
        DatasetConfig::CifarBinary { train, test } => SplitDataset::new(
            load_cifar_binary(train, Split::Train)?,
            load_cifar_binary(test, Split::Test)?,
        ),
    }
}

pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let data = load_dataset(&config.dataset)?;
    let normalizer = Normalizer::fit(&data.train, config.normalization_mode())?;
    let test = normalizer.apply(&data.test)?;
    let augmenter = Augmenter::new(config.augmentation.recipe()?, data.train.shape())?;
    let classes = data.train.classes();
    Ok(PreparedData {
        train: data.train,
        test,
        normalizer,
        augmenter,
        classes,
    })
}

pub fn layer_sizes(config: &ExperimentConfig, input_dim: usize) -> Vec<usize> {
    std::iter::once(input_dim).chain(config.model.hidden.iter().copied()).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed:04}"))
}

pub fn step_dir(seed_dir: &Path, step: usize) -> PathBuf {
    seed_dir.join(format!("step-{step:03}"))
}

/// Randomness bookkeeping for a checkpoint. Every stream of a step is
/// derived from `(seed, step, stream)`, so the seed and the next step index
/// are the whole generator state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngCheckpoint {
    pub generator: String,
    pub seed: u64,
    pub next_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PlanFile {
    order: Vec<ClassId>,
    batches: Vec<Vec<ClassId>>,
    warning: Option<String>,
}

fn save_checkpoint(dir: &Path, state: &IncrementalState) -> Result<()> {
    let step = state.step_index - 1;
    let dir = step_dir(dir, step);
    create_dir(&dir)?;
    state.net.save(&dir.join("model.json"))?;
    state.memory.manifest().save(&dir.join("memory.json"))?;
    write_json(
        &dir.join("rng.json"),
        &RngCheckpoint {
            generator: "chacha8 seeded by run seed, stream by step".into(),
            seed: state.seed,
            next_step: state.step_index,
        },
    )?;
    write_json(&dir.join("metrics.json"), state.history.last().expect("step metrics"))
}

/// Metrics of the completed prefix of steps under `seed_dir`.
fn completed_steps(seed_dir: &Path) -> Result<Vec<StepMetrics>> {
    let mut out = Vec::new();
    loop {
        let path = step_dir(seed_dir, out.len()).join("metrics.json");
        if !path.exists() {
            return Ok(out);
        }
        out.push(read_json(&path)?);
    }
}

fn load_state(seed_dir: &Path, seed: u64, history: Vec<StepMetrics>, train: &Dataset) -> Result<IncrementalState> {
    let dir = step_dir(seed_dir, history.len() - 1);
    let net = IncrementalNet::load(&dir.join("model.json"))?;
    let manifest = MemoryManifest::load(&dir.join("memory.json"))?;
    let memory = RepresentativeMemory::from_manifest(&manifest, |id| train.sample(id).map(<[f64]>::to_vec))?;
    let rng: RngCheckpoint = read_json(&dir.join("rng.json"))?;
    if rng.seed != seed || rng.next_step != history.len() {
        return Err(Error::State(format!("inconsistent checkpoint in {}", dir.display())));
    }
    Ok(IncrementalState {
        net,
        memory,
        step_index: history.len(),
        seed,
        history,
    })
}

struct SeedRun {
    report: RunReport,
    upper_bound: Option<f64>,
}

enum SeedOutcome {
    Done(SeedRun),
    Interrupted,
}

struct Shared<'a> {
    config: &'a ExperimentConfig,
    digest: &'a str,
    data: &'a PreparedData,
    step_config: StepConfig,
    options: &'a RunOptions,
}

impl Shared<'_> {
    fn emit(&self, p: Progress) {
        if let Some(f) = &self.options.progress {
            f(&p);
        }
    }

    fn run_seed(&self, seed: u64) -> Result<SeedOutcome> {
        let cfg = self.config;
        let plan: ClassSplitPlan = make_class_splits(&self.data.classes, cfg.step_size, seed)?;
        let dir = self.options.out_dir.as_ref().map(|d| seed_dir(d, seed));
        if let Some(dir) = &dir {
            create_dir(dir)?;
            write_json(
                &dir.join("plan.json"),
                &PlanFile {
                    order: plan.order.clone(),
                    batches: plan.batches.clone(),
                    warning: plan.warning.clone(),
                },
            )?;
        }
        let layers = layer_sizes(cfg, self.data.train.shape().len());
        let ctx = StepContext {
            train: &self.data.train,
            test: &self.data.test,
            normalizer: &self.data.normalizer,
            augmenter: &self.data.augmenter,
            config: &self.step_config,
        };

        let done = match (&dir, self.options.resume) {
            (Some(d), true) => completed_steps(d)?,
            _ => Vec::new(),
        };
        let mut state = if done.is_empty() {
            IncrementalState::new(&layers, cfg.memory.mode()?, cfg.memory.strategy()?, seed)?
        } else {
            self.emit(Progress::Resumed {
                seed,
                next_step: done.len(),
            });
            load_state(dir.as_deref().expect("resume needs a directory"), seed, done, &self.data.train)?
        };

        while state.step_index < plan.batches.len() {
            let step = state.step_index;
            let mut observer = |e: &EpochEvent| {
                self.emit(Progress::Epoch {
                    seed,
                    step,
                    phase: e.phase,
                    epoch: e.epoch,
                    lr: e.lr,
                    loss: e.loss,
                })
            };
            state = incremental_step(state, &plan.batches[step], &ctx, &mut observer)?;
            if let Some(d) = &dir {
                save_checkpoint(d, &state)?;
            }
            let m = state.history.last().expect("metrics");
            self.emit(Progress::Step {
                seed,
                step,
                classes_seen: m.seen_classes,
                accuracy: m.overall_accuracy,
                old_accuracy: m.old_class_accuracy,
                new_accuracy: m.new_class_accuracy,
            });
            if self.options.stop_after_step == Some(step) && state.step_index < plan.batches.len() {
                return Ok(SeedOutcome::Interrupted);
            }
        }

        let ub = if cfg.upper_bound {
            let path = dir.as_ref().map(|d| d.join("upper-bound.json"));
            let metrics = match &path {
                Some(p) if self.options.resume && p.exists() => read_json::<StepMetrics>(p)?,
                _ => {
                    let m = upper_bound(&layers, &self.data.classes, &ctx, seed, &mut |_| {})?;
                    if let Some(p) = &path {
                        write_json(p, &m)?;
                    }
                    m
                }
            };
            self.emit(Progress::UpperBound {
                seed,
                accuracy: metrics.overall_accuracy,
            });
            Some(metrics.overall_accuracy)
        } else {
            None
        };
        Ok(SeedOutcome::Done(SeedRun {
            report: RunReport::from_steps(self.digest.to_string(), seed, plan.order, state.history),
            upper_bound: ub,
        }))
    }
}

fn assemble(
    config: &ExperimentConfig,
    digest: String,
    runs: Vec<SeedRun>,
    failures: Vec<RunFailure>,
) -> Result<ExperimentReport> {
    let upper_bound = if config.upper_bound && !runs.is_empty() {
        let per_seed: Vec<SeedAccuracy> = runs
            .iter()
            .filter_map(|r| {
                r.upper_bound.map(|accuracy| SeedAccuracy {
                    seed: r.report.seed,
                    accuracy,
                })
            })
            .collect();
        let (mean, std) = mean_std(&per_seed.iter().map(|s| s.accuracy).collect::<Vec<_>>());
        Some(UpperBoundSummary { per_seed, mean, std })
    } else {
        None
    };
    let runs: Vec<RunReport> = runs.into_iter().map(|r| r.report).collect();
    Ok(ExperimentReport {
        name: config.name.clone(),
        config_digest: digest,
        aggregate: aggregate(&runs)?,
        runs,
        failures,
        upper_bound,
    })
}

fn write_report(dir: &Path, report: &ExperimentReport) -> Result<()> {
    let path = dir.join("report.json");
    fs::write(&path, report.to_json()?).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("curve.csv");
    fs::write(&path, curve_csv(&report.aggregate.curve)).map_err(|e| Error::io(&path, e))
}

fn prepare_out_dir(config: &ExperimentConfig, dir: &Path, resume: bool) -> Result<()> {
    let saved = dir.join("config.toml");
    if saved.exists() {
        if !resume {
            return Err(Error::State(format!(
                "{} already holds a run; resume it or choose another directory",
                dir.display()
            )));
        }
        let previous = ExperimentConfig::load(&saved)?;
        if previous.digest()? != config.digest()? {
            return Err(Error::Config(format!(
                "config differs from the one stored in {}",
                dir.display()
            )));
        }
        return Ok(());
    }
    create_dir(dir)?;
    config.save(&saved)
}

/// Runs every seed of `config`. Seeds that fail are listed in the report and
/// the aggregate covers the rest.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutcome> {
    config.validate().into_result()?;
    let digest = config.digest()?;
    if let Some(dir) = &options.out_dir {
        prepare_out_dir(config, dir, options.resume)?;
    }
    let data = prepare_data(config)?;
    let shared = Shared {
        config,
        digest: &digest,
        data: &data,
        step_config: config.step_config(),
        options,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads)
        .build()
        .map_err(|e| Error::State(e.to_string()))?;
    let outcomes: Vec<(u64, Result<SeedOutcome>)> = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| (seed, shared.run_seed(seed)))
            .collect()
    });

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut interrupted = false;
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(SeedOutcome::Done(run)) => runs.push(run),
            Ok(SeedOutcome::Interrupted) => interrupted = true,
            Err(e) => {
                let failure = RunFailure {
                    seed,
                    message: e.to_string(),
                };
                shared.emit(Progress::Failed {
                    seed,
                    message: failure.message.clone(),
                });
                if let Some(dir) = &options.out_dir {
                    write_json(&seed_dir(dir, seed).join("failure.json"), &failure)?;
                }
                failures.push(failure);
            }
        }
    }
    if interrupted {
        return Ok(RunOutcome::Interrupted);
    }
    let report = assemble(config, digest, runs, failures)?;
    if let Some(dir) = &options.out_dir {
        write_report(dir, &report)?;
    }
    Ok(RunOutcome::Complete(report))
}

/// Rebuilds the report of a finished run directory from its step logs.
pub fn regenerate_report(dir: &Path) -> Result<ExperimentReport> {
    let config = ExperimentConfig::load(&dir.join("config.toml"))?;
    let digest = config.digest()?;
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for &seed in &config.seeds {
        let sdir = seed_dir(dir, seed);
        let failure = sdir.join("failure.json");
        if failure.exists() {
            failures.push(read_json(&failure)?);
            continue;
        }
        let plan: PlanFile = read_json(&sdir.join("plan.json"))?;
        let steps = completed_steps(&sdir)?;
        if steps.len() != plan.batches.len() {
            return Err(Error::Data(format!(
                "{} has {} of {} steps",
                sdir.display(),
                steps.len(),
                plan.batches.len()
            )));
        }
        let upper_bound = if config.upper_bound {
            Some(read_json::<StepMetrics>(&sdir.join("upper-bound.json"))?.overall_accuracy)
        } else {
            None
        };
        runs.push(SeedRun {
            report: RunReport::from_steps(digest.clone(), seed, plan.order, steps),
            upper_bound,
        });
    }
    assemble(&config, digest, runs, failures)
}

/// Regenerates and rewrites `report.json` and `curve.csv`.
pub fn rewrite_report(dir: &Path) -> Result<ExperimentReport> {
    let report = regenerate_report(dir)?;
    write_report(dir, &report)?;
    Ok(report)
}
