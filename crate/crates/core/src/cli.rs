//! The `crossdistill` command line: `run`, `report`, `validate`.
//!
//! Exit status 0 on success, 1 for configuration problems, 2 for failures
//! while running.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::Error;
use crate::experiment::{regenerate_report, run_experiment, ExperimentReport, Progress, RunOptions, RunOutcome};
use crate::pipeline::Phase;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "crossdistill", version, about = "Class-incremental learning with cross-distilled loss")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment and write its run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the last completed step found in `--out`.
        #[arg(long)]
        resume: bool,
        /// Comma-separated seeds replacing the ones in the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Worker threads for independent seeds (0 = all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Recompute reports from run directories and print a merged CSV and a
    /// summary table.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the merged CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

/// One machine-parseable line per event.
pub fn progress_line(p: &Progress) -> String {
    match p {
        Progress::Epoch {
            seed,
            step,
            phase,
            epoch,
            lr,
            loss,
        } => {
            let phase = match phase {
                Phase::Train => "train",
                Phase::Finetune => "finetune",
            };
            format!("epoch seed={seed} step={step} phase={phase} epoch={epoch} lr={lr} loss={loss:.6}")
        }
        Progress::Step {
            seed,
            step,
            classes_seen,
            accuracy,
            old_accuracy,
            new_accuracy,
        } => format!(
            "step seed={seed} step={step} classes={classes_seen} acc={accuracy:.6} old={} new={}",
            fmt_opt(*old_accuracy),
            fmt_opt(*new_accuracy)
        ),
        Progress::Resumed { seed, next_step } => format!("resume seed={seed} next_step={next_step}"),
        Progress::UpperBound { seed, accuracy } => format!("upper-bound seed={seed} acc={accuracy:.6}"),
        Progress::Failed { seed, message } => format!("failed seed={seed} message={message:?}"),
    }
}

fn load_valid(path: &Path) -> Result<ExperimentConfig, i32> {
    let cfg = ExperimentConfig::load(path).map_err(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    })?;
    let v = cfg.validate();
    for w in &v.warnings {
        eprintln!("warning: {w}");
    }
    if !v.is_ok() {
        for e in &v.errors {
            eprintln!("error: {e}");
        }
        return Err(EXIT_CONFIG);
    }
    Ok(cfg)
}

pub fn cmd_validate(config: &Path) -> i32 {
    match load_valid(config) {
        Ok(cfg) => {
            println!("ok {} ({} seeds)", cfg.name, cfg.seeds.len());
            EXIT_OK
        }
        Err(code) => code,
    }
}

pub fn cmd_run(config: &Path, out: &Path, resume: bool, seeds: Option<Vec<u64>>, threads: usize) -> i32 {
    let mut cfg = match load_valid(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(seeds) = seeds {
        cfg.seeds = seeds;
        if let Err(e) = cfg.validate().into_result() {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    }
    let options = RunOptions {
        out_dir: Some(out.to_path_buf()),
        resume,
        threads,
        stop_after_step: None,
        progress: Some(Arc::new(|p: &Progress| println!("{}", progress_line(p)))),
    };
    match run_experiment(&cfg, &options) {
        Ok(RunOutcome::Complete(report)) => {
            println!(
                "done runs={} failures={} aia_mean={} aia_std={}",
                report.aggregate.completed_runs,
                report.failures.len(),
                fmt_opt(report.aggregate.mean_average_incremental_accuracy),
                fmt_opt(report.aggregate.std_average_incremental_accuracy)
            );
            if report.failures.is_empty() {
                EXIT_OK
            } else {
                EXIT_RUNTIME
            }
        }
        Ok(RunOutcome::Interrupted) => EXIT_RUNTIME,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Merged per-step curves, one labelled block per report.
pub fn merged_csv(reports: &[(String, ExperimentReport)]) -> String {
    let mut out = String::from("label,step,classes_seen,mean_acc,std_acc\n");
    for (label, r) in reports {
        for p in &r.aggregate.curve {
            let _ = writeln!(out, "{label},{},{},{},{}", p.step, p.classes_seen, p.mean_acc, p.std_acc);
        }
    }
    out
}

pub fn summary_table(reports: &[(String, ExperimentReport)]) -> String {
    let width = reports.iter().map(|(l, _)| l.len()).max().unwrap_or(5).max(5);
    let mut out = format!(
        "{:<width$}  {:>4}  {:>17}  {:>9}  {:>11}\n",
        "label", "runs", "avg incr. acc", "final acc", "upper bound"
    );
    for (label, r) in reports {
        let aia = match (
            r.aggregate.mean_average_incremental_accuracy,
            r.aggregate.std_average_incremental_accuracy,
        ) {
            (Some(m), Some(s)) => format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s),
            _ => "-".into(),
        };
        let last = r
            .aggregate
            .curve
            .last()
            .map_or_else(|| "-".into(), |p| format!("{:.2}", 100.0 * p.mean_acc));
        let ub = r
            .upper_bound
            .as_ref()
            .map_or_else(|| "-".into(), |u| format!("{:.2}", 100.0 * u.mean));
        let _ = writeln!(
            out,
            "{label:<width$}  {:>4}  {aia:>17}  {last:>9}  {ub:>11}",
            r.aggregate.completed_runs
        );
    }
    out
}

/// Regenerates each directory's report and labels it by experiment name,
/// falling back to the directory name on clashes.
pub fn collect_reports(dirs: &[PathBuf]) -> crate::Result<Vec<(String, ExperimentReport)>> {
    let mut reports = Vec::new();
    for dir in dirs {
        reports.push((dir.clone(), regenerate_report(dir)?));
    }
    let mut uses: BTreeMap<String, usize> = BTreeMap::new();
    for (_, r) in &reports {
        *uses.entry(r.name.clone()).or_insert(0) += 1;
    }
    let grid: Option<Vec<usize>> = reports
        .first()
        .map(|(_, r)| r.aggregate.curve.iter().map(|p| p.classes_seen).collect());
    for (dir, r) in &reports {
        let g: Vec<usize> = r.aggregate.curve.iter().map(|p| p.classes_seen).collect();
        if Some(&g) != grid.as_ref() {
            return Err(Error::Data(format!(
                "{} has step grid {g:?}, which differs from {:?}",
                dir.display(),
                grid.unwrap_or_default()
            )));
        }
    }
    Ok(reports
        .into_iter()
        .map(|(dir, r)| {
            let label = if uses[&r.name] > 1 {
                format!("{}@{}", r.name, dir.display())
            } else {
                r.name.clone()
            };
            (label, r)
        })
        .collect())
}

pub fn cmd_report(dirs: &[PathBuf], out: Option<&Path>) -> i32 {
    let reports = match collect_reports(dirs) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let csv = merged_csv(&reports);
    print!("{csv}");
    println!();
    print!("{}", summary_table(&reports));
    if let Some(path) = out {
        if let Err(e) = fs::write(path, &csv) {
            eprintln!("error: writing {}: {e}", path.display());
            return EXIT_RUNTIME;
        }
    }
    EXIT_OK
}

/// Parses `args` (program name first) and runs the chosen subcommand.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run {
            config,
            out,
            resume,
            seeds,
            threads,
        } => cmd_run(&config, &out, resume, seeds, threads),
        Command::Report { dirs, out } => cmd_report(&dirs, out.as_deref()),
        Command::Validate { config } => cmd_validate(&config),
    }
}
