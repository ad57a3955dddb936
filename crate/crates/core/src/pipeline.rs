//! The incremental step: build a dual-labelled training set, train with the
//! cross-distilled loss, fine-tune on a balanced subset, refresh the memory,
//! evaluate.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{Augmenter, Dataset, Normalizer};
use crate::error::{Error, Result};
use crate::eval::{evaluate_accuracy, StepMetrics};
use crate::loss::{cross_distilled_loss, DualLabel, LabelBatch, LossConfig};
use crate::memory::{Exemplar, MemoryMode, NewClassData, RepresentativeMemory, SampleId, SelectionStrategy};
use crate::model::{ClassId, IncrementalNet, TeacherSnapshot};
use crate::optim::{lr_schedule, sgd_step, OptimizerConfig};
use crate::tensor::Matrix;

const FORWARD_CHUNK: usize = 1024;

/// Independent random streams used inside one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    NetInit,
    HeadInit,
    Augment,
    Train,
    Finetune,
}

/// Deterministic generator for `(seed, step, stream)`.
pub fn stream_rng(seed: u64, step: usize, stream: RngStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 8) | stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Exemplar,
    NewClass,
}

/// Where a training row came from. `variant` 0 is the un-augmented original.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Origin {
    pub provenance: Provenance,
    pub source: SampleId,
    pub variant: usize,
}

/// Normalized training rows, each with a class label and one teacher-logit
/// block per distilled head.
#[derive(Debug, Clone, PartialEq)]
pub struct DualLabeledSet {
    inputs: Matrix,
    classes: Vec<ClassId>,
    columns: BTreeMap<ClassId, usize>,
    distill: Vec<Matrix>,
    origins: Vec<Origin>,
}

impl DualLabeledSet {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn origin(&self, row: usize) -> Origin {
        self.origins[row]
    }

    pub fn distilled_heads(&self) -> usize {
        self.distill.len()
    }

    pub fn distill_block(&self, head: usize) -> &Matrix {
        &self.distill[head]
    }

    pub fn label(&self, row: usize) -> DualLabel {
        let mut class_label = vec![0.0; self.columns.len()];
        class_label[self.columns[&self.classes[row]]] = 1.0;
        DualLabel {
            class_label,
            distill_labels: self.distill.iter().map(|m| m.row(row).to_vec()).collect(),
        }
    }

    /// Inputs and labels of `rows` in matrix form.
    pub fn batch(&self, rows: &[usize]) -> (Matrix, LabelBatch) {
        let mut targets = Matrix::zeros(rows.len(), self.columns.len());
        for (r, &i) in rows.iter().enumerate() {
            targets.set(r, self.columns[&self.classes[i]], 1.0);
        }
        let labels = LabelBatch {
            class_targets: targets,
            distill_logits: self.distill.iter().map(|m| m.select_rows(rows)).collect(),
        };
        (self.inputs.select_rows(rows), labels)
    }

    pub fn subset(&self, rows: &[usize]) -> DualLabeledSet {
        DualLabeledSet {
            inputs: self.inputs.select_rows(rows),
            classes: rows.iter().map(|&i| self.classes[i]).collect(),
            columns: self.columns.clone(),
            distill: self.distill.iter().map(|m| m.select_rows(rows)).collect(),
            origins: rows.iter().map(|&i| self.origins[i]).collect(),
        }
    }

    /// Number of distinct source samples per class.
    pub fn source_counts(&self) -> BTreeMap<ClassId, usize> {
        let mut counts = BTreeMap::new();
        for (c, o) in self.classes.iter().zip(&self.origins) {
            if o.variant == 0 {
                *counts.entry(*c).or_insert(0) += 1;
            }
        }
        counts
    }

    fn push_distill_block(&mut self, block: Matrix) -> Result<()> {
        if block.rows() != self.len() {
            return Err(Error::dim("distill block", self.len(), block.rows()));
        }
        self.distill.push(block);
        Ok(())
    }
}

/// Evaluates `f` over row chunks and stacks the results.
fn chunked(inputs: &Matrix, mut f: impl FnMut(&Matrix) -> Result<Vec<Matrix>>) -> Result<Vec<Matrix>> {
    let mut parts: Vec<Vec<Matrix>> = Vec::new();
    for start in (0..inputs.rows()).step_by(FORWARD_CHUNK) {
        let idx: Vec<usize> = (start..(start + FORWARD_CHUNK).min(inputs.rows())).collect();
        parts.push(f(&inputs.select_rows(&idx))?);
    }
    let blocks = parts.first().map_or(0, Vec::len);
    (0..blocks)
        .map(|b| {
            let mut values = Vec::new();
            let mut cols = 0;
            for p in &parts {
                cols = p[b].cols();
                values.extend_from_slice(p[b].values());
            }
            Matrix::from_vec(inputs.rows(), cols, values)
        })
        .collect()
}

/// Raw samples of one new class.
#[derive(Debug, Clone)]
pub struct ClassSamples {
    pub class: ClassId,
    pub samples: Vec<Exemplar>,
}

/// Exemplars plus new-class samples, augmented then normalized. Each row is
/// labelled against `columns` and, when `distill` is set, carries the
/// teacher's old-head logits evaluated on that exact row.
#[allow(clippy::too_many_arguments)]
pub fn build_training_set<R: Rng + ?Sized>(
    memory: &RepresentativeMemory,
    new_data: &[ClassSamples],
    teacher: &TeacherSnapshot,
    columns: &BTreeMap<ClassId, usize>,
    augmenter: &Augmenter,
    normalizer: &Normalizer,
    distill: bool,
    rng: &mut R,
) -> Result<DualLabeledSet> {
    if new_data.is_empty() || new_data.iter().any(|d| d.samples.is_empty()) {
        return Err(Error::Argument("no samples for the new classes".into()));
    }
    let sources = memory
        .iter()
        .flat_map(|(c, list)| list.iter().map(move |e| (c, e, Provenance::Exemplar)))
        .chain(
            new_data
                .iter()
                .flat_map(|d| d.samples.iter().map(move |e| (d.class, e, Provenance::NewClass))),
        );
    let mut values = Vec::new();
    let mut classes = Vec::new();
    let mut origins = Vec::new();
    for (class, ex, provenance) in sources {
        if !columns.contains_key(&class) {
            return Err(Error::Config(format!("class {class} has no output column")));
        }
        for (variant, sample) in augmenter.expand(&ex.input, rng)?.into_iter().enumerate() {
            values.extend(normalizer.apply_row(&sample)?);
            classes.push(class);
            origins.push(Origin {
                provenance,
                source: ex.id,
                variant,
            });
        }
    }
    let dim = augmenter.shape.len();
    let inputs = Matrix::from_vec(classes.len(), dim, values)?;
    let distill = if distill && teacher.old_heads() > 0 {
        chunked(&inputs, |chunk| teacher.teacher_logits(chunk))?
    } else {
        Vec::new()
    };
    Ok(DualLabeledSet {
        inputs,
        classes,
        columns: columns.clone(),
        distill,
        origins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Train,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochEvent {
    pub phase: Phase,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Mini-batch SGD over `set` for `epochs`; every parameter is updated. The
/// first `set.distilled_heads()` heads receive a distillation term. Returns
/// the mean training loss of each epoch.
pub fn train<R: Rng + ?Sized>(
    net: &mut IncrementalNet,
    set: &DualLabeledSet,
    optimizer: &OptimizerConfig,
    epochs: usize,
    loss: &LossConfig,
    phase: Phase,
    rng: &mut R,
    observer: &mut dyn FnMut(&EpochEvent),
) -> Result<Vec<f64>> {
    if epochs == 0 {
        return Ok(Vec::new());
    }
    if set.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    if set.distilled_heads() > net.heads().len() {
        return Err(Error::Config(format!(
            "{} distilled heads for a model with {} heads",
            set.distilled_heads(),
            net.heads().len()
        )));
    }
    net.params_mut().reset_velocity();
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for rows in order.chunks(optimizer.batch_size) {
            let (inputs, labels) = set.batch(rows);
            let mut tape = Tape::new();
            let out = net.forward_on_tape(&mut tape, inputs)?;
            let l = match cross_distilled_loss(&mut tape, &out, &labels, set.distilled_heads(), loss) {
                Err(Error::Numeric(reason)) => {
                    return Err(Error::Diverged {
                        epoch,
                        reason,
                        trace,
                    })
                }
                r => r?,
            };
            let value = tape.value(l).get(0, 0);
            if !value.is_finite() {
                trace.push(value);
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("loss became {value}"),
                    trace,
                });
            }
            let grads = tape.backward(l, net.params())?;
            if let Err(e) = sgd_step(net.params_mut(), &grads, optimizer, epoch, rng) {
                return Err(Error::Diverged {
                    epoch,
                    reason: e.to_string(),
                    trace,
                });
            }
            total += value * rows.len() as f64;
        }
        let mean = total / set.len() as f64;
        observer(&EpochEvent {
            phase,
            epoch,
            lr: lr_schedule(epoch, optimizer),
            loss: mean,
        });
        trace.push(mean);
    }
    Ok(trace)
}

/// Rows of a balanced subset: for old classes the first `n` exemplars in
/// memory, for new classes the first `n` samples in `strategy` order over
/// current features. Every class of `net` must contribute.
pub fn balanced_subset(
    net: &IncrementalNet,
    set: &DualLabeledSet,
    memory: &RepresentativeMemory,
    n: usize,
    strategy: SelectionStrategy,
) -> Result<Vec<usize>> {
    let mut keep: BTreeSet<(ClassId, SampleId)> = BTreeSet::new();
    for class in net.class_ids() {
        let chosen: Vec<SampleId> = if memory.exemplars(class).is_empty() {
            let rows: Vec<usize> = (0..set.len())
                .filter(|&r| {
                    let o = set.origin(r);
                    set.classes[r] == class && o.provenance == Provenance::NewClass && o.variant == 0
                })
                .collect();
            if rows.is_empty() {
                Vec::new()
            } else {
                let features = net.features(&set.inputs.select_rows(&rows))?;
                strategy
                    .order(&features, class.0 as u64)?
                    .into_iter()
                    .take(n)
                    .map(|i| set.origin(rows[i]).source)
                    .collect()
            }
        } else {
            memory.exemplars(class).iter().take(n).map(|e| e.id).collect()
        };
        if chosen.is_empty() {
            return Err(Error::Config(format!(
                "class {class} has no samples for balanced fine-tuning"
            )));
        }
        keep.extend(chosen.into_iter().map(|id| (class, id)));
    }
    Ok((0..set.len())
        .filter(|&r| keep.contains(&(set.classes[r], set.origin(r).source)))
        .collect())
}

/// Fine-tunes on a balanced subset of `set`. With `distill`, the newest head
/// is distilled from the net as it is on entry, next to the old heads.
pub fn balanced_finetune<R: Rng + ?Sized>(
    net: &mut IncrementalNet,
    set: &DualLabeledSet,
    memory: &RepresentativeMemory,
    n: usize,
    config: &StepConfig,
    rng: &mut R,
    observer: &mut dyn FnMut(&EpochEvent),
) -> Result<FinetuneOutcome> {
    let rows = balanced_subset(net, set, memory, n, memory.strategy())?;
    let mut subset = set.subset(&rows);
    let distill = config.ablation.distillation;
    if distill {
        let newest = net.heads().len() - 1;
        if subset.distilled_heads() != newest {
            return Err(Error::Config(format!(
                "training set distills {} heads, expected {newest}",
                subset.distilled_heads()
            )));
        }
        let block = chunked(&subset.inputs, |chunk| {
            let f = net.features(chunk)?;
            Ok(vec![net.head_logits(newest, &f)?])
        })?;
        subset.push_distill_block(block.into_iter().next().expect("one block"))?;
    }
    let optimizer = config.optimizer.with_base_lr(config.finetune_lr);
    let trace = train(
        net,
        &subset,
        &optimizer,
        config.finetune_epochs,
        &config.loss,
        Phase::Finetune,
        rng,
        observer,
    )?;
    Ok(FinetuneOutcome {
        counts: subset.source_counts(),
        distilled_heads: subset.distilled_heads(),
        loss_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    pub counts: BTreeMap<ClassId, usize>,
    pub distilled_heads: usize,
    pub loss_trace: Vec<f64>,
}

/// Switches for the ablation variants; `true` keeps the component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub augmentation: bool,
    pub finetune: bool,
    pub memory: bool,
    pub distillation: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation::FULL
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        augmentation: true,
        finetune: true,
        memory: true,
        distillation: true,
    };
    pub const BASE: Ablation = Ablation {
        augmentation: false,
        finetune: false,
        ..Ablation::FULL
    };
    pub const AUGMENTATION_ONLY: Ablation = Ablation {
        finetune: false,
        ..Ablation::FULL
    };
    pub const FINETUNE_ONLY: Ablation = Ablation {
        augmentation: false,
        ..Ablation::FULL
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub loss: LossConfig,
    pub ablation: Ablation,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            optimizer: OptimizerConfig::default(),
            epochs: 40,
            finetune_epochs: 30,
            finetune_lr: 0.01,
            loss: LossConfig::default(),
            ablation: Ablation::FULL,
        }
    }
}

/// Run-wide inputs shared by every step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    /// Raw training split; memory ids index into it.
    pub train: &'a Dataset,
    /// Normalized test split.
    pub test: &'a Dataset,
    pub normalizer: &'a Normalizer,
    pub augmenter: &'a Augmenter,
    pub config: &'a StepConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalState {
    pub net: IncrementalNet,
    pub memory: RepresentativeMemory,
    pub step_index: usize,
    pub seed: u64,
    pub history: Vec<StepMetrics>,
}

impl IncrementalState {
    pub fn new(
        layer_sizes: &[usize],
        mode: MemoryMode,
        strategy: SelectionStrategy,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = stream_rng(seed, 0, RngStream::NetInit);
        Ok(IncrementalState {
            net: IncrementalNet::new(layer_sizes, &mut rng)?,
            memory: RepresentativeMemory::new(mode, strategy),
            step_index: 0,
            seed,
            history: Vec::new(),
        })
    }
}

/// Runs one incremental step over `new_classes`. On failure the error names
/// the stage; the input state is consumed either way.
pub fn incremental_step(
    state: IncrementalState,
    new_classes: &[ClassId],
    ctx: &StepContext,
    observer: &mut dyn FnMut(&EpochEvent),
) -> Result<IncrementalState> {
    let IncrementalState {
        mut net,
        mut memory,
        step_index,
        seed,
        mut history,
    } = state;
    let started = Instant::now();
    let cfg = ctx.config;
    let ab = cfg.ablation;

    let teacher = TeacherSnapshot::capture(&net);
    net.add_classification_head(new_classes, &mut stream_rng(seed, step_index, RngStream::HeadInit))
        .map_err(|e| e.in_stage("snapshot", step_index))?;

    let new_data: Vec<ClassSamples> = new_classes
        .iter()
        .map(|&class| ClassSamples {
            class,
            samples: ctx.train.class_samples(class),
        })
        .collect();
    let augmenter = if ab.augmentation {
        *ctx.augmenter
    } else {
        Augmenter::identity(ctx.augmenter.shape)
    };
    let set = build_training_set(
        &memory,
        &new_data,
        &teacher,
        &net.class_columns(),
        &augmenter,
        ctx.normalizer,
        ab.distillation,
        &mut stream_rng(seed, step_index, RngStream::Augment),
    )
    .map_err(|e| e.in_stage("build", step_index))?;

    let train_loss = train(
        &mut net,
        &set,
        &cfg.optimizer,
        cfg.epochs,
        &cfg.loss,
        Phase::Train,
        &mut stream_rng(seed, step_index, RngStream::Train),
        observer,
    )
    .map_err(|e| e.in_stage("train", step_index))?;

    let total_classes = net.num_classes();
    let mut finetune_loss = Vec::new();
    if teacher.old_heads() > 0 && ab.finetune && ab.memory {
        let n = memory
            .per_class_budget(total_classes)
            .map_err(|e| e.in_stage("finetune", step_index))?;
        finetune_loss = balanced_finetune(
            &mut net,
            &set,
            &memory,
            n,
            cfg,
            &mut stream_rng(seed, step_index, RngStream::Finetune),
            observer,
        )
        .map_err(|e| e.in_stage("finetune", step_index))?
        .loss_trace;
    }

    if ab.memory {
        let update: Result<()> = (|| {
            let incoming = new_data
                .into_iter()
                .map(|d| {
                    let raw = Matrix::from_rows(
                        &d.samples.iter().map(|e| e.input.as_slice()).collect::<Vec<_>>(),
                    )?;
                    let features = net.features(&ctx.normalizer.apply_matrix(&raw)?)?;
                    Ok(NewClassData {
                        class: d.class,
                        samples: d.samples,
                        features,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            memory.update_memory(incoming)
        })();
        update.map_err(|e| e.in_stage("memory", step_index))?;
    }

    let seen: BTreeSet<ClassId> = net.class_ids().into_iter().collect();
    let mut metrics = ctx
        .test
        .restrict_to(&seen)
        .ok_or_else(|| Error::Data("no test samples for the seen classes".into()))
        .and_then(|test| {
            evaluate_accuracy(&net, &test, &new_classes.iter().copied().collect(), step_index)
        })
        .map_err(|e| e.in_stage("evaluate", step_index))?;
    metrics.train_loss = train_loss;
    metrics.finetune_loss = finetune_loss;
    metrics.wall_clock_secs = started.elapsed().as_secs_f64();
    history.push(metrics);

    Ok(IncrementalState {
        net,
        memory,
        step_index: step_index + 1,
        seed,
        history,
    })
}

/// Non-incremental reference: one step over every class, without memory.
pub fn upper_bound(
    layer_sizes: &[usize],
    classes: &[ClassId],
    ctx: &StepContext,
    seed: u64,
    observer: &mut dyn FnMut(&EpochEvent),
) -> Result<StepMetrics> {
    let config = StepConfig {
        ablation: Ablation {
            memory: false,
            finetune: false,
            ..ctx.config.ablation
        },
        ..*ctx.config
    };
    let ctx = StepContext {
        config: &config,
        ..*ctx
    };
    let state = IncrementalState::new(
        layer_sizes,
        MemoryMode::FixedPerClass { per_class: 0 },
        SelectionStrategy::Herding,
        seed,
    )?;
    let mut state = incremental_step(state, classes, &ctx, observer)?;
    Ok(state.history.pop().expect("one step"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_gaussian_dataset, AugmentRecipe, NormalizationMode, SyntheticSpec};

    fn ids(v: &[u32]) -> Vec<ClassId> {
        v.iter().map(|&i| ClassId(i)).collect()
    }

    struct Fixture {
        train: Dataset,
        test: Dataset,
        normalizer: Normalizer,
        augmenter: Augmenter,
    }

    fn fixture(num_classes: usize) -> Fixture {
        let data = synthetic_gaussian_dataset(&SyntheticSpec {
            num_classes,
            dim: 4,
            train_per_class: 20,
            test_per_class: 10,
            separation: 6.0,
            seed: 3,
        })
        .unwrap();
        let normalizer = Normalizer::fit(&data.train, NormalizationMode::Standardize).unwrap();
        let test = normalizer.apply(&data.test).unwrap();
        let shape = data.train.shape();
        Fixture {
            train: data.train,
            test,
            normalizer,
            augmenter: Augmenter::new(AugmentRecipe::VectorJitter { copies: 1, scale: 0.1 }, shape)
                .unwrap(),
        }
    }

    fn quiet() -> impl FnMut(&EpochEvent) {
        |_| {}
    }

    fn small_config() -> StepConfig {
        StepConfig {
            optimizer: OptimizerConfig {
                noise_eta: 0.0,
                batch_size: 16,
                ..OptimizerConfig::default()
            },
            epochs: 8,
            finetune_epochs: 4,
            ..StepConfig::default()
        }
    }

    #[test]
    fn stream_rngs_differ() {
        let a: u64 = stream_rng(1, 0, RngStream::Train).random();
        let b: u64 = stream_rng(1, 0, RngStream::Finetune).random();
        let c: u64 = stream_rng(1, 1, RngStream::Train).random();
        let a2: u64 = stream_rng(1, 0, RngStream::Train).random();
        assert_eq!(a, a2);
        assert!(a != b && a != c);
    }

    #[test]
    fn first_step_has_no_distillation() {
        let fx = fixture(4);
        let cfg = small_config();
        let ctx = StepContext {
            train: &fx.train,
            test: &fx.test,
            normalizer: &fx.normalizer,
            augmenter: &fx.augmenter,
            config: &cfg,
        };
        let state = IncrementalState::new(
            &[4, 8],
            MemoryMode::FixedTotal { capacity: 8 },
            SelectionStrategy::Herding,
            5,
        )
        .unwrap();
        let state = incremental_step(state, &ids(&[0, 1]), &ctx, &mut quiet()).unwrap();
        assert_eq!(state.step_index, 1);
        assert_eq!(state.memory.total(), 8);
        assert!(state.history[0].finetune_loss.is_empty());

        // a second step has one old head, so every row carries one block
        let teacher = TeacherSnapshot::capture(&state.net);
        let mut net = state.net.clone();
        net.add_classification_head(&ids(&[2, 3]), &mut stream_rng(0, 0, RngStream::HeadInit))
            .unwrap();
        let new_data: Vec<ClassSamples> = ids(&[2, 3])
            .into_iter()
            .map(|class| ClassSamples {
                class,
                samples: fx.train.class_samples(class),
            })
            .collect();
        let set = build_training_set(
            &state.memory,
            &new_data,
            &teacher,
            &net.class_columns(),
            &fx.augmenter,
            &fx.normalizer,
            true,
            &mut stream_rng(0, 0, RngStream::Augment),
        )
        .unwrap();
        assert_eq!(set.len(), 2 * (8 + 40));
        assert!((0..set.len()).all(|i| set.label(i).distill_labels.len() == 1));
        // exemplar labels equal a direct teacher evaluation on the same row
        let direct = teacher.teacher_logits(set.inputs()).unwrap();
        assert_eq!(direct[0], *set.distill_block(0));

        let rows = balanced_subset(&net, &set, &state.memory, 4, SelectionStrategy::Herding).unwrap();
        let counts = set.subset(&rows).source_counts();
        assert!(counts.values().all(|&c| c == 4), "{counts:?}");
        assert_eq!(counts.len(), 4);
    }

    #[test]
    fn empty_new_class_data_is_rejected() {
        let fx = fixture(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = IncrementalNet::new(&[4], &mut rng).unwrap();
        let mem = RepresentativeMemory::new(MemoryMode::FixedTotal { capacity: 4 }, SelectionStrategy::Herding);
        let r = build_training_set(
            &mem,
            &[],
            &TeacherSnapshot::capture(&net),
            &BTreeMap::new(),
            &fx.augmenter,
            &fx.normalizer,
            true,
            &mut rng,
        );
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn zero_epochs_leave_the_net_unchanged() {
        let fx = fixture(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = IncrementalNet::new(&[4, 6], &mut rng).unwrap();
        let teacher = TeacherSnapshot::capture(&net);
        net.add_classification_head(&ids(&[0, 1]), &mut rng).unwrap();
        let mem = RepresentativeMemory::new(MemoryMode::FixedTotal { capacity: 4 }, SelectionStrategy::Herding);
        let data: Vec<ClassSamples> = ids(&[0, 1])
            .into_iter()
            .map(|class| ClassSamples {
                class,
                samples: fx.train.class_samples(class),
            })
            .collect();
        let set = build_training_set(
            &mem,
            &data,
            &teacher,
            &net.class_columns(),
            &fx.augmenter,
            &fx.normalizer,
            true,
            &mut rng,
        )
        .unwrap();
        let before = net.clone();
        let cfg = small_config();
        let trace = train(&mut net, &set, &cfg.optimizer, 0, &cfg.loss, Phase::Train, &mut rng, &mut quiet())
            .unwrap();
        assert!(trace.is_empty());
        assert_eq!(before, net);

        let trace = train(&mut net, &set, &cfg.optimizer, 3, &cfg.loss, Phase::Train, &mut rng, &mut quiet())
            .unwrap();
        assert_eq!(trace.len(), 3);
        let ex = before.extractor_param_ids()[0];
        assert_ne!(before.params().value(ex), net.params().value(ex));
    }

    #[test]
    fn divergence_is_reported_with_a_trace() {
        let fx = fixture(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = IncrementalNet::new(&[4, 6], &mut rng).unwrap();
        let teacher = TeacherSnapshot::capture(&net);
        net.add_classification_head(&ids(&[0, 1]), &mut rng).unwrap();
        let mem = RepresentativeMemory::new(MemoryMode::FixedTotal { capacity: 4 }, SelectionStrategy::Herding);
        let data: Vec<ClassSamples> = ids(&[0, 1])
            .into_iter()
            .map(|class| ClassSamples {
                class,
                samples: fx.train.class_samples(class),
            })
            .collect();
        let set = build_training_set(
            &mem,
            &data,
            &teacher,
            &net.class_columns(),
            &Augmenter::identity(fx.train.shape()),
            &fx.normalizer,
            true,
            &mut rng,
        )
        .unwrap();
        let opt = OptimizerConfig {
            base_lr: 1e200,
            noise_eta: 0.0,
            ..OptimizerConfig::default()
        };
        let r = train(&mut net, &set, &opt, 5, &LossConfig::default(), Phase::Train, &mut rng, &mut quiet());
        assert!(matches!(r, Err(Error::Diverged { .. })), "{r:?}");
    }

    #[test]
    fn seen_class_is_a_staged_error() {
        let fx = fixture(4);
        let cfg = small_config();
        let ctx = StepContext {
            train: &fx.train,
            test: &fx.test,
            normalizer: &fx.normalizer,
            augmenter: &fx.augmenter,
            config: &cfg,
        };
        let state = IncrementalState::new(
            &[4, 8],
            MemoryMode::FixedTotal { capacity: 8 },
            SelectionStrategy::Herding,
            5,
        )
        .unwrap();
        let state = incremental_step(state, &ids(&[0, 1]), &ctx, &mut quiet()).unwrap();
        let err = incremental_step(state, &ids(&[1, 2]), &ctx, &mut quiet()).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "snapshot", step: 1, .. }), "{err}");
    }
}
