//! Global versus task-aware accuracy after each step of one reference run.

use std::path::PathBuf;

use crossdistill::config::ExperimentConfig;
use crossdistill::experiment::{run_experiment, RunOptions};

fn main() -> crossdistill::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/reference.toml");
    let cfg = ExperimentConfig {
        seeds: vec![0],
        upper_bound: false,
        ..ExperimentConfig::load(&path)?
    };
    let report = run_experiment(&cfg, &RunOptions::default())?.report().expect("complete");
    println!("{:>4} {:>8} {:>8} {:>10}", "step", "classes", "global", "task-aware");
    for s in &report.runs[0].steps {
        println!(
            "{:>4} {:>8} {:>8.4} {:>10.4}",
            s.step_index, s.seen_classes, s.overall_accuracy, s.task_aware_accuracy
        );
    }
    Ok(())
}
