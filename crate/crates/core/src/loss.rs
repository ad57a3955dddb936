//! Classification cross-entropy over all heads plus temperature-softened
//! distillation over the old heads.
//!
//! Softening a softmax distribution by the exponent `1/T` and renormalizing
//! is the same as taking the softmax of `logits / T`, so the loss kernels
//! work on scaled logits directly. [`soften`] is the standalone operation on
//! probability vectors.

use serde::{Deserialize, Serialize};

use crate::autodiff::{soft_target_ce_value, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{NetOutput, TapeOutput};
use crate::tensor::{self, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { temperature: 2.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// `dist_j^(1/T) / Σ_k dist_k^(1/T)`.
pub fn soften(dist: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Argument(format!("temperature must be > 0, got {temperature}")));
    }
    if dist.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(Error::Numeric("soften needs non-negative finite entries".into()));
    }
    if temperature == 1.0 {
        let total: f64 = dist.iter().sum();
        if total <= 0.0 {
            return Err(Error::Numeric("soften of an all-zero vector".into()));
        }
        return Ok(dist.to_vec());
    }
    let powered: Vec<f64> = dist.iter().map(|&p| p.powf(1.0 / temperature)).collect();
    let total: f64 = powered.iter().sum();
    if total <= 0.0 {
        return Err(Error::Numeric("soften of an all-zero vector".into()));
    }
    Ok(powered.into_iter().map(|p| p / total).collect())
}

/// Softened teacher distributions `softmax(logits / T)`, row by row.
pub fn distillation_targets(teacher_logits: &Matrix, temperature: f64) -> Result<Matrix> {
    tensor::softmax(&teacher_logits.map(|v| v / temperature))
}

fn check_one_hot(targets: &Matrix) -> Result<()> {
    for r in 0..targets.rows() {
        let row = targets.row(r);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::Argument(format!("target row {r} is not one-hot")));
        }
    }
    Ok(())
}

/// Mean cross-entropy between one-hot `targets` and `softmax(logits)`.
pub fn cross_entropy_loss(logits: &Matrix, targets: &Matrix) -> Result<f64> {
    logits.same_shape(targets, "cross_entropy_loss")?;
    check_one_hot(targets)?;
    Ok(soft_target_ce_value(logits, targets, 1.0)?.0)
}

/// Mean cross-entropy between softened teacher and softened student softmax.
pub fn distillation_loss(student_logits: &Matrix, teacher_logits: &Matrix, temperature: f64) -> Result<f64> {
    student_logits.same_shape(teacher_logits, "distillation_loss")?;
    let targets = distillation_targets(teacher_logits, temperature)?;
    Ok(soft_target_ce_value(student_logits, &targets, temperature)?.0)
}

/// The two labels attached to one training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualLabel {
    /// One-hot over all classes seen so far, in concatenated-logit order.
    pub class_label: Vec<f64>,
    /// Teacher logits, one vector per distilled head.
    pub distill_labels: Vec<Vec<f64>>,
}

/// Labels for a mini-batch in matrix form.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelBatch {
    pub class_targets: Matrix,
    /// One `N × C_f` teacher-logit block per distilled head, in head order.
    pub distill_logits: Vec<Matrix>,
}

impl LabelBatch {
    pub fn from_dual_labels(labels: &[DualLabel]) -> Result<Self> {
        let first = labels
            .first()
            .ok_or_else(|| Error::Argument("empty label batch".into()))?;
        let f = first.distill_labels.len();
        if let Some(bad) = labels.iter().position(|l| l.distill_labels.len() != f) {
            return Err(Error::Config(format!(
                "sample {bad} has {} distillation labels, expected {f}",
                labels[bad].distill_labels.len()
            )));
        }
        let class_targets = Matrix::from_rows(
            &labels.iter().map(|l| l.class_label.as_slice()).collect::<Vec<_>>(),
        )?;
        let distill_logits = (0..f)
            .map(|h| {
                Matrix::from_rows(
                    &labels
                        .iter()
                        .map(|l| l.distill_labels[h].as_slice())
                        .collect::<Vec<_>>(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LabelBatch {
            class_targets,
            distill_logits,
        })
    }

    pub fn distilled_heads(&self) -> usize {
        self.distill_logits.len()
    }
}

fn check_label_count(labels: &LabelBatch, old_heads: usize, heads: usize) -> Result<()> {
    if labels.distilled_heads() != old_heads || old_heads > heads {
        return Err(Error::Config(format!(
            "labels carry {} distillation targets but the model has {old_heads} old heads \
             (of {heads} total)",
            labels.distilled_heads()
        )));
    }
    Ok(())
}

/// Cross-entropy over the concatenated logits plus one distillation term per
/// old head, recorded on `tape`. The first `old_heads` heads are distilled.
pub fn cross_distilled_loss(
    tape: &mut Tape,
    student: &TapeOutput,
    labels: &LabelBatch,
    old_heads: usize,
    config: &LossConfig,
) -> Result<Var> {
    check_label_count(labels, old_heads, student.per_head.len())?;
    check_one_hot(&labels.class_targets)?;
    let mut terms = vec![tape.soft_target_cross_entropy(
        student.concatenated,
        labels.class_targets.clone(),
        1.0,
    )?];
    for (head, teacher) in labels.distill_logits.iter().enumerate() {
        let targets = distillation_targets(teacher, config.temperature)?;
        terms.push(tape.soft_target_cross_entropy(
            student.per_head[head],
            targets,
            config.temperature,
        )?);
    }
    tape.sum(&terms)
}

/// Value-only counterpart of [`cross_distilled_loss`].
pub fn cross_distilled_loss_value(
    student: &NetOutput,
    labels: &LabelBatch,
    old_heads: usize,
    config: &LossConfig,
) -> Result<f64> {
    check_label_count(labels, old_heads, student.per_head.len())?;
    let mut total = cross_entropy_loss(&student.concatenated, &labels.class_targets)?;
    for (head, teacher) in labels.distill_logits.iter().enumerate() {
        total += distillation_loss(&student.per_head[head], teacher, config.temperature)?;
    }
    Ok(total)
}
