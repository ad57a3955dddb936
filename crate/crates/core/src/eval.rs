//! Accuracy metrics and multi-run aggregation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ClassId, IncrementalNet};
use crate::tensor::{self, Matrix};

const EVAL_BATCH: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub class: ClassId,
    pub correct: usize,
    pub total: usize,
}

impl ClassCount {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step_index: usize,
    pub seen_classes: usize,
    pub overall_accuracy: f64,
    pub per_class: Vec<ClassCount>,
    /// Accuracy on classes learned before this step; absent on the first step.
    pub old_class_accuracy: Option<f64>,
    pub new_class_accuracy: Option<f64>,
    /// Accuracy when the argmax is restricted to the sample's own head.
    pub task_aware_accuracy: f64,
    pub train_loss: Vec<f64>,
    pub finetune_loss: Vec<f64>,
    pub wall_clock_secs: f64,
}

impl StepMetrics {
    /// Overall accuracy recomputed from the per-class counts.
    pub fn recount(&self) -> f64 {
        let correct: usize = self.per_class.iter().map(|c| c.correct).sum();
        let total: usize = self.per_class.iter().map(|c| c.total).sum();
        correct as f64 / total as f64
    }
}

fn pooled(counts: &[ClassCount], keep: impl Fn(ClassId) -> bool) -> Option<f64> {
    let (correct, total) = counts
        .iter()
        .filter(|c| keep(c.class))
        .fold((0, 0), |(a, b), c| (a + c.correct, b + c.total));
    (total > 0).then(|| correct as f64 / total as f64)
}

/// Global predictions: argmax over the concatenated softmax scores.
pub fn predict(net: &IncrementalNet, inputs: &Matrix) -> Result<Vec<ClassId>> {
    let classes = net.class_ids();
    let mut out = Vec::with_capacity(inputs.rows());
    for start in (0..inputs.rows()).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(inputs.rows())).collect();
        let scores = tensor::softmax(&net.forward(&inputs.select_rows(&idx))?.concatenated)?;
        for r in 0..scores.rows() {
            out.push(classes[tensor::argmax(scores.row(r))]);
        }
    }
    Ok(out)
}

/// Predictions restricted to the head that owns each sample's true class.
fn predict_within_task(
    net: &IncrementalNet,
    inputs: &Matrix,
    labels: &[ClassId],
    task_of_class: &BTreeMap<ClassId, usize>,
) -> Result<Vec<ClassId>> {
    let mut out = Vec::with_capacity(inputs.rows());
    for start in (0..inputs.rows()).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(inputs.rows())).collect();
        let logits = net.forward(&inputs.select_rows(&idx))?;
        for (r, &i) in idx.iter().enumerate() {
            let task = *task_of_class
                .get(&labels[i])
                .ok_or_else(|| Error::Data(format!("class {} has no task", labels[i])))?;
            if task >= logits.per_head.len() {
                return Err(Error::Data(format!("task {task} has no head")));
            }
            let head = &logits.per_head[task];
            out.push(net.heads()[task].class_ids[tensor::argmax(head.row(r))]);
        }
    }
    Ok(out)
}

fn check_seen(net: &IncrementalNet, test: &Dataset) -> Result<BTreeSet<ClassId>> {
    let seen: BTreeSet<ClassId> = net.class_ids().into_iter().collect();
    if let Some(c) = test.labels().iter().find(|c| !seen.contains(c)) {
        return Err(Error::Data(format!("test label {c} is not among the seen classes")));
    }
    if test.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    Ok(seen)
}

/// Multi-class accuracy over `test`, whose labels must all be seen classes.
/// `new_classes` are the ones introduced by the latest step.
pub fn evaluate_accuracy(
    net: &IncrementalNet,
    test: &Dataset,
    new_classes: &BTreeSet<ClassId>,
    step_index: usize,
) -> Result<StepMetrics> {
    let seen = check_seen(net, test)?;
    let preds = predict(net, test.inputs())?;
    let mut counts: BTreeMap<ClassId, ClassCount> = BTreeMap::new();
    for (&truth, &pred) in test.labels().iter().zip(&preds) {
        let e = counts.entry(truth).or_insert(ClassCount {
            class: truth,
            correct: 0,
            total: 0,
        });
        e.total += 1;
        if truth == pred {
            e.correct += 1;
        }
    }
    let per_class: Vec<ClassCount> = counts.into_values().collect();
    let overall = pooled(&per_class, |_| true).unwrap_or(0.0);
    let task_aware = task_aware_accuracy(net, test, &net.task_of_class())?;
    Ok(StepMetrics {
        step_index,
        seen_classes: seen.len(),
        overall_accuracy: overall,
        old_class_accuracy: pooled(&per_class, |c| !new_classes.contains(&c)),
        new_class_accuracy: pooled(&per_class, |c| new_classes.contains(&c)),
        per_class,
        task_aware_accuracy: task_aware,
        train_loss: Vec::new(),
        finetune_loss: Vec::new(),
        wall_clock_secs: 0.0,
    })
}

/// Accuracy when the argmax only ranges over the true task's classes.
pub fn task_aware_accuracy(
    net: &IncrementalNet,
    test: &Dataset,
    task_of_class: &BTreeMap<ClassId, usize>,
) -> Result<f64> {
    check_seen(net, test)?;
    let preds = predict_within_task(net, test.inputs(), test.labels(), task_of_class)?;
    let correct = preds.iter().zip(test.labels()).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / test.len() as f64)
}

/// Mean of the per-step accuracies, leaving out the first step.
pub fn average_incremental_accuracy(step_accuracies: &[f64]) -> Result<f64> {
    if step_accuracies.len() < 2 {
        return Err(Error::UndefinedMetric(
            "average incremental accuracy needs at least two steps".into(),
        ));
    }
    let rest = &step_accuracies[1..];
    Ok(rest.iter().sum::<f64>() / rest.len() as f64)
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Outcome of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_digest: String,
    pub seed: u64,
    pub class_order: Vec<ClassId>,
    pub steps: Vec<StepMetrics>,
    pub average_incremental_accuracy: Option<f64>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn from_steps(
        config_digest: String,
        seed: u64,
        class_order: Vec<ClassId>,
        steps: Vec<StepMetrics>,
    ) -> Self {
        let accs: Vec<f64> = steps.iter().map(|s| s.overall_accuracy).collect();
        let wall = steps.iter().map(|s| s.wall_clock_secs).sum();
        RunReport {
            config_digest,
            seed,
            class_order,
            average_incremental_accuracy: average_incremental_accuracy(&accs).ok(),
            steps,
            wall_clock_secs: wall,
        }
    }

    pub fn final_step(&self) -> Option<&StepMetrics> {
        self.steps.last()
    }
}

/// One point of the averaged accuracy curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub classes_seen: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub message: String,
}

/// Cross-run statistics. Standard deviations are population (divide by R).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub completed_runs: usize,
    pub curve: Vec<CurvePoint>,
    pub mean_average_incremental_accuracy: Option<f64>,
    pub std_average_incremental_accuracy: Option<f64>,
}

/// Aggregates completed runs; every run must share the same step grid.
pub fn aggregate(runs: &[RunReport]) -> Result<Aggregate> {
    let Some(first) = runs.first() else {
        return Ok(Aggregate {
            completed_runs: 0,
            curve: Vec::new(),
            mean_average_incremental_accuracy: None,
            std_average_incremental_accuracy: None,
        });
    };
    let grid: Vec<usize> = first.steps.iter().map(|s| s.seen_classes).collect();
    for r in runs {
        let g: Vec<usize> = r.steps.iter().map(|s| s.seen_classes).collect();
        if g != grid {
            return Err(Error::Data(format!(
                "run with seed {} has step grid {g:?}, expected {grid:?}",
                r.seed
            )));
        }
    }
    let curve = grid
        .iter()
        .enumerate()
        .map(|(i, &classes_seen)| {
            let accs: Vec<f64> = runs.iter().map(|r| r.steps[i].overall_accuracy).collect();
            let (mean_acc, std_acc) = mean_std(&accs);
            CurvePoint {
                step: i,
                classes_seen,
                mean_acc,
                std_acc,
            }
        })
        .collect();
    let aias: Option<Vec<f64>> = runs.iter().map(|r| r.average_incremental_accuracy).collect();
    let (mean, std) = match aias {
        Some(v) => {
            let (m, s) = mean_std(&v);
            (Some(m), Some(s))
        }
        None => (None, None),
    };
    Ok(Aggregate {
        completed_runs: runs.len(),
        curve,
        mean_average_incremental_accuracy: mean,
        std_average_incremental_accuracy: std,
    })
}

/// CSV with columns `step,classes_seen,mean_acc,std_acc`.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("step,classes_seen,mean_acc,std_acc\n");
    for p in curve {
        out.push_str(&format!("{},{},{},{}\n", p.step, p.classes_seen, p.mean_acc, p.std_acc));
    }
    out
}
