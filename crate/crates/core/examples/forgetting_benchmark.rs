//! Runs the reference benchmark under the ablation variants and prints the
//! average incremental accuracy of each.
//!
//! cargo run --release --example forgetting_benchmark [-- path/to/config.toml]

use std::path::PathBuf;

use crossdistill::config::ExperimentConfig;
use crossdistill::experiment::{run_experiment, RunOptions};
use crossdistill::pipeline::Ablation;

fn main() -> crossdistill::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/reference.toml"));
    let base = ExperimentConfig::load(&path)?;
    let variants = [
        ("full", Ablation::FULL),
        ("augmentation only", Ablation::AUGMENTATION_ONLY),
        ("fine-tuning only", Ablation::FINETUNE_ONLY),
        ("base", Ablation::BASE),
        ("no memory", Ablation { memory: false, ..Ablation::FULL }),
        ("no memory, no distillation", Ablation { memory: false, distillation: false, ..Ablation::FULL }),
    ];
    println!("{:<28} {:>16} {:>14}", "variant", "avg incr. acc", "final old acc");
    for (name, ablation) in variants {
        let cfg = ExperimentConfig { ablation, upper_bound: false, ..base.clone() };
        let report = run_experiment(&cfg, &RunOptions::default())?.report().expect("complete");
        let old: Vec<f64> = report
            .runs
            .iter()
            .filter_map(|r| r.final_step().and_then(|s| s.old_class_accuracy))
            .collect();
        println!(
            "{name:<28} {:>9.2} ± {:<4.2} {:>14.2}",
            100.0 * report.aggregate.mean_average_incremental_accuracy.unwrap_or(f64::NAN),
            100.0 * report.aggregate.std_average_incremental_accuracy.unwrap_or(f64::NAN),
            100.0 * old.iter().sum::<f64>() / old.len() as f64
        );
    }
    Ok(())
}
