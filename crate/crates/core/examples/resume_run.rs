//! Interrupts a run after its second step, resumes it, and checks the result
//! against an uninterrupted run.

use std::path::PathBuf;

use crossdistill::config::ExperimentConfig;
use crossdistill::experiment::{regenerate_report, run_experiment, RunOptions, RunOutcome};

fn main() -> crossdistill::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/reference.toml");
    let cfg = ExperimentConfig {
        seeds: vec![0, 1],
        upper_bound: false,
        ..ExperimentConfig::load(&path)?
    };
    let scratch = tempfile::tempdir().map_err(|e| crossdistill::Error::State(e.to_string()))?;
    let interrupted = scratch.path().join("interrupted");
    let straight = scratch.path().join("straight");

    let first = run_experiment(&cfg, &RunOptions { out_dir: Some(interrupted.clone()), stop_after_step: Some(1), ..Default::default() })?;
    assert_eq!(first, RunOutcome::Interrupted);
    println!("stopped after step 1");

    let resumed = run_experiment(&cfg, &RunOptions { out_dir: Some(interrupted.clone()), resume: true, ..Default::default() })?
        .report()
        .expect("complete");
    let uninterrupted = run_experiment(&cfg, &RunOptions { out_dir: Some(straight), ..Default::default() })?
        .report()
        .expect("complete");

    let accs = |r: &crossdistill::experiment::ExperimentReport| -> Vec<Vec<f64>> {
        r.runs.iter().map(|run| run.steps.iter().map(|s| s.overall_accuracy).collect()).collect()
    };
    println!("resumed       {:?}", accs(&resumed));
    println!("uninterrupted {:?}", accs(&uninterrupted));
    println!("identical: {}", accs(&resumed) == accs(&uninterrupted));
    println!("regenerated report matches: {}", regenerate_report(&interrupted)? == resumed);
    Ok(())
}
