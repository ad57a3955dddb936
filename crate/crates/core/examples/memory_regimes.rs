//! Fixed-total versus fixed-per-class memory on the reference benchmark.

use std::path::PathBuf;

use crossdistill::config::{ExperimentConfig, MemoryConfig, MemoryModeKind};
use crossdistill::experiment::{run_experiment, RunOptions};
use crossdistill::memory::per_class_budget;

fn main() -> crossdistill::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/reference.toml");
    let base = ExperimentConfig { upper_bound: false, ..ExperimentConfig::load(&path)? };

    let regimes = [
        ("K = 20", MemoryModeKind::FixedTotal, Some(20), None),
        ("K = 60", MemoryModeKind::FixedTotal, Some(60), None),
        ("K = 100", MemoryModeKind::FixedTotal, Some(100), None),
        ("m = 10 per class", MemoryModeKind::FixedPerClass, None, Some(10)),
    ];
    for (label, mode, capacity, per_class) in regimes {
        let cfg = ExperimentConfig {
            memory: MemoryConfig { mode, capacity, per_class, ..base.memory.clone() },
            ..base.clone()
        };
        let budgets: Vec<usize> = (1..=5)
            .map(|s| per_class_budget(cfg.memory.mode().expect("valid mode"), 2 * s))
            .collect::<crossdistill::Result<_>>()?;
        let report = run_experiment(&cfg, &RunOptions::default())?.report().expect("complete");
        println!(
            "{label:<18} exemplars/class per step {budgets:?}  avg incr. acc {:.2}",
            100.0 * report.aggregate.mean_average_incremental_accuracy.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
