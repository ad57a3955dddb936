//! Datasets, the class-split protocol, normalization and augmentation.

mod augment;
mod loaders;
mod normalize;
mod synthetic;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{Exemplar, SampleId};
use crate::model::ClassId;
use crate::tensor::Matrix;

pub use augment::{
    augment_brightness, augment_contrast, augment_recipe, brightness_with, contrast_with,
    crop_with, mirror, random_crop, AugmentRecipe, Augmenter, Cifar11Draws,
    BRIGHTNESS_RANGE, CONTRAST_RANGE,
};
pub use loaders::{load_cifar_binary, load_csv, CIFAR_RECORD_BYTES};
pub use normalize::{NormalizationMode, Normalizer};
pub use synthetic::{synthetic_gaussian_dataset, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

/// Layout of one flattened sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SampleShape {
    Vector { dim: usize },
    /// Interleaved `height × width × channels`, values in `[0, 255]`.
    Image {
        height: usize,
        width: usize,
        channels: usize,
    },
}

impl SampleShape {
    pub fn len(&self) -> usize {
        match *self {
            SampleShape::Vector { dim } => dim,
            SampleShape::Image {
                height,
                width,
                channels,
            } => height * width * channels,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_image(&self) -> bool {
        matches!(self, SampleShape::Image { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    shape: SampleShape,
    split: Split,
    inputs: Matrix,
    labels: Vec<ClassId>,
}

impl Dataset {
    pub fn new(shape: SampleShape, split: Split, inputs: Matrix, labels: Vec<ClassId>) -> Result<Self> {
        if inputs.cols() != shape.len() {
            return Err(Error::dim(
                "dataset",
                format!("sample shape of {} values", shape.len()),
                format!("{} input columns", inputs.cols()),
            ));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::Data(format!(
                "{} inputs but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if !inputs.is_finite() {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        Ok(Dataset {
            shape,
            split,
            inputs,
            labels,
        })
    }

    pub fn shape(&self) -> SampleShape {
        self.shape
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    /// Distinct labels, sorted.
    pub fn classes(&self) -> Vec<ClassId> {
        self.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Samples of `class`, identified by their row in this dataset.
    pub fn class_samples(&self, class: ClassId) -> Vec<Exemplar> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == class)
            .map(|(i, _)| Exemplar {
                id: SampleId(i),
                input: self.input(i).to_vec(),
            })
            .collect()
    }

    pub fn sample(&self, id: SampleId) -> Option<&[f64]> {
        (id.0 < self.len()).then(|| self.input(id.0))
    }

    /// Keeps only samples whose label is in `classes`. Returns `None` when
    /// nothing is left.
    pub fn restrict_to(&self, classes: &BTreeSet<ClassId>) -> Option<Dataset> {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        if keep.is_empty() {
            return None;
        }
        Some(Dataset {
            shape: self.shape,
            split: self.split,
            inputs: self.inputs.select_rows(&keep),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    pub(crate) fn with_inputs(&self, inputs: Matrix) -> Dataset {
        Dataset {
            shape: self.shape,
            split: self.split,
            inputs,
            labels: self.labels.clone(),
        }
    }
}

/// Train and test splits over the same class universe.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
}

impl SplitDataset {
    pub fn new(train: Dataset, test: Dataset) -> Result<Self> {
        if train.split != Split::Train || test.split != Split::Test {
            return Err(Error::Data("train/test splits are swapped or mislabeled".into()));
        }
        if train.shape != test.shape {
            return Err(Error::Data("train and test sample shapes differ".into()));
        }
        let universe: BTreeSet<ClassId> = train.labels.iter().copied().collect();
        if let Some(c) = test.labels.iter().find(|c| !universe.contains(c)) {
            return Err(Error::Data(format!("test class {c} has no training samples")));
        }
        Ok(SplitDataset { train, test })
    }
}

/// Ordered class batches for incremental training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSplitPlan {
    pub order: Vec<ClassId>,
    pub step_size: usize,
    pub batches: Vec<Vec<ClassId>>,
    /// Set when `step_size` exceeded the number of classes.
    pub warning: Option<String>,
}

/// Seeded shuffle of `class_ids`, then consecutive chunks of `step_size`.
pub fn make_class_splits(class_ids: &[ClassId], step_size: usize, seed: u64) -> Result<ClassSplitPlan> {
    if step_size == 0 {
        return Err(Error::Argument("step_size must be >= 1".into()));
    }
    if class_ids.is_empty() {
        return Err(Error::Argument("no classes to split".into()));
    }
    let unique: BTreeSet<ClassId> = class_ids.iter().copied().collect();
    if unique.len() != class_ids.len() {
        return Err(Error::Argument("class list contains duplicates".into()));
    }
    let mut order = class_ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let warning = (step_size > order.len()).then(|| {
        format!(
            "step size {step_size} exceeds the {} available classes; using a single batch",
            order.len()
        )
    });
    let batches = order.chunks(step_size).map(<[ClassId]>::to_vec).collect();
    Ok(ClassSplitPlan {
        order,
        step_size,
        batches,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: u32) -> Vec<ClassId> {
        (0..n).map(ClassId).collect()
    }

    #[test]
    fn split_examples() {
        let plan = make_class_splits(&ids(10), 2, 3).unwrap();
        assert_eq!(plan.batches.len(), 5);
        assert!(plan.batches.iter().all(|b| b.len() == 2));
        assert_eq!(make_class_splits(&ids(100), 50, 0).unwrap().batches.len(), 2);
        assert_eq!(plan, make_class_splits(&ids(10), 2, 3).unwrap());

        let mut seen: Vec<ClassId> = plan.batches.concat();
        seen.sort();
        assert_eq!(seen, ids(10));

        let uneven = make_class_splits(&ids(7), 3, 1).unwrap();
        assert_eq!(uneven.batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 1]);

        let single = make_class_splits(&ids(4), 9, 1).unwrap();
        assert_eq!(single.batches.len(), 1);
        assert!(single.warning.is_some());
        assert!(make_class_splits(&ids(4), 0, 1).is_err());
    }

    #[test]
    fn restrict_and_class_samples() {
        let inputs = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
        let labels = vec![ClassId(0), ClassId(1), ClassId(0), ClassId(2)];
        let ds = Dataset::new(SampleShape::Vector { dim: 1 }, Split::Train, inputs, labels).unwrap();
        let zero = ds.class_samples(ClassId(0));
        assert_eq!(zero.iter().map(|e| e.id.0).collect::<Vec<_>>(), vec![0, 2]);
        let keep: BTreeSet<ClassId> = [ClassId(2)].into();
        assert_eq!(ds.restrict_to(&keep).unwrap().len(), 1);
        assert!(ds.restrict_to(&[ClassId(9)].into()).is_none());
    }
}
