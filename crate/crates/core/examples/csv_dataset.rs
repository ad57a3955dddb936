//! Runs a small experiment from CSV files (`label,x1,...,xd`).

use std::fmt::Write as _;
use std::fs;

use crossdistill::config::ExperimentConfig;
use crossdistill::experiment::{run_experiment, RunOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn write_split(path: &std::path::Path, per_class: usize, rng: &mut ChaCha8Rng) {
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    let mut text = String::from("label,x,y\n");
    for class in 0..6 {
        let angle = class as f64 * std::f64::consts::TAU / 6.0;
        for _ in 0..per_class {
            let x = 4.0 * angle.cos() + noise.sample(rng);
            let y = 4.0 * angle.sin() + noise.sample(rng);
            let _ = writeln!(text, "{class},{x},{y}");
        }
    }
    fs::write(path, text).expect("write csv");
}

fn main() -> crossdistill::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| crossdistill::Error::State(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    write_split(&dir.path().join("train.csv"), 80, &mut rng);
    write_split(&dir.path().join("test.csv"), 40, &mut rng);

    let config_path = dir.path().join("ring.toml");
    fs::write(
        &config_path,
        r#"
name = "ring"
seeds = [0, 1]
step_size = 2

[dataset]
kind = "csv"
train = "train.csv"
test = "test.csv"

[model]
hidden = [16]

[memory]
mode = "fixed-per-class"
per_class = 10

[training]
epochs = 20
finetune_epochs = 10
noise_eta = 0.0
batch_size = 32
"#,
    )
    .map_err(|e| crossdistill::Error::State(e.to_string()))?;

    let cfg = ExperimentConfig::load(&config_path)?;
    let report = run_experiment(&cfg, &RunOptions::default())?.report().expect("complete");
    for p in &report.aggregate.curve {
        println!("step {} ({} classes): {:.3} ± {:.3}", p.step, p.classes_seen, p.mean_acc, p.std_acc);
    }
    Ok(())
}
