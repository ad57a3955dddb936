use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    None,
    /// Divide pixels by 255, then subtract the training mean image.
    ScaleAndCenter,
    /// Subtract the training mean image only.
    CenterOnly,
    /// Per-dimension zero mean, unit variance from training statistics.
    Standardize,
}

/// Statistics fitted on a training split and reused for every other split.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    mode: NormalizationMode,
    pre_scale: f64,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(train: &Dataset, mode: NormalizationMode) -> Result<Self> {
        if train.split() != Split::Train {
            return Err(Error::State(
                "normalization statistics must come from the training split".into(),
            ));
        }
        let is_image_mode = matches!(
            mode,
            NormalizationMode::ScaleAndCenter | NormalizationMode::CenterOnly
        );
        if is_image_mode && !train.shape().is_image() {
            return Err(Error::Config(format!(
                "normalization {mode:?} needs image samples"
            )));
        }
        let d = train.shape().len();
        let pre_scale = if mode == NormalizationMode::ScaleAndCenter {
            1.0 / 255.0
        } else {
            1.0
        };
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for i in 0..train.len() {
            for (j, &v) in train.input(i).iter().enumerate() {
                let v = v * pre_scale;
                mean[j] += v;
                sq[j] += v * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let inv_std = match mode {
            NormalizationMode::Standardize => sq
                .iter()
                .zip(&mean)
                .map(|(s, m)| {
                    let var = (s / n - m * m).max(0.0);
                    if var > 1e-24 {
                        1.0 / var.sqrt()
                    } else {
                        1.0
                    }
                })
                .collect(),
            _ => vec![1.0; d],
        };
        if mode == NormalizationMode::None {
            mean = vec![0.0; d];
        }
        Ok(Normalizer {
            mode,
            pre_scale,
            mean,
            inv_std,
        })
    }

    pub fn mode(&self) -> NormalizationMode {
        self.mode
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return Err(Error::dim(
                "normalize",
                format!("fitted on {} values", self.mean.len()),
                format!("sample of {}", row.len()),
            ));
        }
        Ok(row
            .iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((v, m), s)| (v * self.pre_scale - m) * s)
            .collect())
    }

    pub fn apply_matrix(&self, inputs: &Matrix) -> Result<Matrix> {
        let mut out = inputs.clone();
        for r in 0..out.rows() {
            let row = self.apply_row(inputs.row(r))?;
            out.row_mut(r).copy_from_slice(&row);
        }
        Ok(out)
    }

    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        Ok(dataset.with_inputs(self.apply_matrix(dataset.inputs())?))
    }
}
