use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossdistill")).args(args).output().unwrap()
}

const MINIMAL: &str = r#"
name = "tiny"
seeds = [0, 1]
step_size = 2

[dataset]
kind = "synthetic"
num_classes = 4
dim = 4
train_per_class = 20
test_per_class = 10
separation = 5.0
seed = 3

[model]
hidden = [8]

[memory]
capacity = 8

[training]
epochs = 3
finetune_epochs = 2
noise_eta = 0.0
batch_size = 16
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), "good.toml", MINIMAL);
    assert_eq!(bin(&["validate", "--config", path_str(&good)]).status.code(), Some(0));

    let bad_t = write_config(dir.path(), "t.toml", &format!("{MINIMAL}\n[loss]\ntemperature = -1.0\n"));
    let bad_step = write_config(dir.path(), "s.toml", &MINIMAL.replace("step_size = 2", "step_size = 0"));
    let unknown = write_config(dir.path(), "u.toml", &MINIMAL.replace("seeds = [0, 1]", "seeds = [0, 1]\ncolour = 1"));
    for p in [bad_t, bad_step, unknown] {
        let out = bin(&["validate", "--config", path_str(&p)]);
        assert_eq!(out.status.code(), Some(1), "{}", p.display());
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", MINIMAL);
    let other = write_config(
        dir.path(),
        "base.toml",
        &format!("{}\n[ablation]\naugmentation = false\nfinetune = false\n", MINIMAL.replace("\"tiny\"", "\"tiny-base\"")),
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = bin(&["run", "--config", path_str(&cfg), "--out", path_str(&a)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("step seed=0 step=1 ")));
    assert!(stdout.lines().last().unwrap().starts_with("done runs=2 failures=0"));
    assert!(a.join("report.json").is_file() && a.join("curve.csv").is_file());

    assert_eq!(bin(&["run", "--config", path_str(&other), "--out", path_str(&b)]).status.code(), Some(0));
    let merged = dir.path().join("merged.csv");
    let out = bin(&["report", path_str(&a), path_str(&b), "--out", path_str(&merged)]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(&merged).unwrap();
    assert!(csv.starts_with("label,step,classes_seen,mean_acc,std_acc\n"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("tiny,")).count(), 2);
    assert_eq!(csv.lines().filter(|l| l.starts_with("tiny-base,")).count(), 2);

    // a rerun into a used directory needs --resume
    assert_eq!(bin(&["run", "--config", path_str(&cfg), "--out", path_str(&a)]).status.code(), Some(2));
    assert_eq!(bin(&["run", "--config", path_str(&cfg), "--out", path_str(&a), "--resume"]).status.code(), Some(0));
}

#[test]
fn report_rejects_mismatched_grids() {
    let dir = tempfile::tempdir().unwrap();
    let two = write_config(dir.path(), "two.toml", MINIMAL);
    let one = write_config(dir.path(), "one.toml", &MINIMAL.replace("step_size = 2", "step_size = 1").replace("\"tiny\"", "\"tiny-1\""));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(bin(&["run", "--config", path_str(&two), "--out", path_str(&a)]).status.code(), Some(0));
    assert_eq!(bin(&["run", "--config", path_str(&one), "--out", path_str(&b)]).status.code(), Some(0));
    let out = bin(&["report", path_str(&a), path_str(&b)]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step grid"));
}

#[test]
fn missing_arguments_are_usage_errors() {
    assert_eq!(bin(&["run"]).status.code(), Some(1));
    assert_eq!(bin(&["report"]).status.code(), Some(1));
}
