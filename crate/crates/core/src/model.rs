//! Shared feature extractor feeding one linear classification head per batch
//! of classes, plus frozen teacher snapshots.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParameterSet};
use crate::tensor::{self, Matrix};

/// Global class identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct DenseLayer {
    weight: ParamId,
    bias: ParamId,
}

/// One classification layer: the classes it scores and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub class_ids: Vec<ClassId>,
    weight: ParamId,
    bias: ParamId,
}

impl HeadSpec {
    pub fn weight_id(&self) -> ParamId {
        self.weight
    }

    pub fn bias_id(&self) -> ParamId {
        self.bias
    }

    pub fn width(&self) -> usize {
        self.class_ids.len()
    }
}

/// Logits of every head for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    pub per_head: Vec<Matrix>,
    /// Head blocks side by side, in head order.
    pub concatenated: Matrix,
}

/// Tape handles for a recorded forward pass.
#[derive(Debug, Clone)]
pub struct TapeOutput {
    pub per_head: Vec<Var>,
    pub concatenated: Var,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalNet {
    /// `[input, hidden..., feature]`; a single entry means identity features.
    layer_sizes: Vec<usize>,
    params: ParameterSet,
    extractor: Vec<DenseLayer>,
    heads: Vec<HeadSpec>,
}

impl IncrementalNet {
    /// A network with a ReLU MLP extractor and no heads yet.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        if layer_sizes.is_empty() || layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "extractor layer sizes must be non-empty and positive, got {layer_sizes:?}"
            )));
        }
        let mut params = ParameterSet::new();
        let mut extractor = Vec::new();
        for (i, pair) in layer_sizes.windows(2).enumerate() {
            let (d_in, d_out) = (pair[0], pair[1]);
            let bound = (6.0 / d_in as f64).sqrt();
            let w = Matrix::from_vec(
                d_in,
                d_out,
                (0..d_in * d_out).map(|_| rng.random_range(-bound..bound)).collect(),
            )?;
            let weight = params.add(format!("extractor.{i}.weight"), w)?;
            let bias = params.add(format!("extractor.{i}.bias"), Matrix::zeros(1, d_out))?;
            extractor.push(DenseLayer { weight, bias });
        }
        Ok(IncrementalNet {
            layer_sizes: layer_sizes.to_vec(),
            params,
            extractor,
            heads: Vec::new(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.layer_sizes.last().expect("non-empty layer sizes")
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn heads(&self) -> &[HeadSpec] {
        &self.heads
    }

    pub fn num_classes(&self) -> usize {
        self.heads.iter().map(HeadSpec::width).sum()
    }

    /// All classes in concatenated-logit column order.
    pub fn class_ids(&self) -> Vec<ClassId> {
        self.heads.iter().flat_map(|h| h.class_ids.iter().copied()).collect()
    }

    /// Column of each class in the concatenated logits.
    pub fn class_columns(&self) -> BTreeMap<ClassId, usize> {
        self.class_ids().into_iter().enumerate().map(|(i, c)| (c, i)).collect()
    }

    /// Head index owning each class.
    pub fn task_of_class(&self) -> BTreeMap<ClassId, usize> {
        self.heads
            .iter()
            .enumerate()
            .flat_map(|(h, spec)| spec.class_ids.iter().map(move |&c| (c, h)))
            .collect()
    }

    /// Parameter ids belonging to the feature extractor.
    pub fn extractor_param_ids(&self) -> Vec<ParamId> {
        self.extractor.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    /// Appends a head for `new_class_ids`; nothing else changes.
    pub fn add_classification_head<R: Rng + ?Sized>(
        &mut self,
        new_class_ids: &[ClassId],
        rng: &mut R,
    ) -> Result<()> {
        if new_class_ids.is_empty() {
            return Err(Error::Config("a head needs at least one class".into()));
        }
        let existing = self.class_columns();
        let mut fresh = std::collections::BTreeSet::new();
        for c in new_class_ids {
            if existing.contains_key(c) || !fresh.insert(*c) {
                return Err(Error::Config(format!("class {c} is already assigned to a head")));
            }
        }
        let d_feat = self.feature_dim();
        let width = new_class_ids.len();
        let bound = 1.0 / (d_feat as f64).sqrt();
        let w = Matrix::from_vec(
            d_feat,
            width,
            (0..d_feat * width).map(|_| rng.random_range(-bound..bound)).collect(),
        )?;
        let index = self.heads.len();
        let weight = self.params.add(format!("head.{index}.weight"), w)?;
        let bias = self.params.add(format!("head.{index}.bias"), Matrix::zeros(1, width))?;
        self.heads.push(HeadSpec {
            class_ids: new_class_ids.to_vec(),
            weight,
            bias,
        });
        Ok(())
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::dim(
                "forward",
                format!("extractor input {}", self.input_dim()),
                format!("batch {}x{}", batch.rows(), batch.cols()),
            ));
        }
        Ok(())
    }

    pub fn features(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut h = batch.clone();
        for layer in &self.extractor {
            let w = self.params.value(layer.weight);
            let b = self.params.value(layer.bias);
            h = tensor::relu(&tensor::dense_forward(&h, w, b.values())?);
        }
        Ok(h)
    }

    pub fn head_logits(&self, head: usize, features: &Matrix) -> Result<Matrix> {
        let spec = &self.heads[head];
        tensor::dense_forward(
            features,
            self.params.value(spec.weight),
            self.params.value(spec.bias).values(),
        )
    }

    pub fn forward(&self, batch: &Matrix) -> Result<NetOutput> {
        if self.heads.is_empty() {
            return Err(Error::Config("forward on a network without heads".into()));
        }
        let features = self.features(batch)?;
        let per_head = (0..self.heads.len())
            .map(|h| self.head_logits(h, &features))
            .collect::<Result<Vec<_>>>()?;
        let concatenated = Matrix::concat_cols(&per_head)?;
        Ok(NetOutput {
            per_head,
            concatenated,
        })
    }

    /// Same computation as [`forward`](Self::forward), recorded for backprop.
    pub fn forward_on_tape(&self, tape: &mut Tape, batch: Matrix) -> Result<TapeOutput> {
        if self.heads.is_empty() {
            return Err(Error::Config("forward on a network without heads".into()));
        }
        self.check_input(&batch)?;
        let mut h = tape.constant(batch);
        for layer in &self.extractor {
            let w = tape.param(&self.params, layer.weight);
            let b = tape.param(&self.params, layer.bias);
            let z = tape.dense(h, w, b)?;
            h = tape.relu(z)?;
        }
        let mut per_head = Vec::with_capacity(self.heads.len());
        for spec in &self.heads {
            let w = tape.param(&self.params, spec.weight);
            let b = tape.param(&self.params, spec.bias);
            per_head.push(tape.dense(h, w, b)?);
        }
        let concatenated = tape.concat_cols(&per_head)?;
        Ok(TapeOutput {
            per_head,
            concatenated,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let net: IncrementalNet = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        net.check_consistency().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(net)
    }

    fn check_consistency(&self) -> Result<()> {
        if self.layer_sizes.is_empty() || self.extractor.len() + 1 != self.layer_sizes.len() {
            return Err(Error::Config("extractor metadata does not match its layers".into()));
        }
        for (i, layer) in self.extractor.iter().enumerate() {
            let expected = (self.layer_sizes[i], self.layer_sizes[i + 1]);
            if layer.weight.0 >= self.params.len()
                || layer.bias.0 >= self.params.len()
                || self.params.value(layer.weight).shape() != expected
                || self.params.value(layer.bias).shape() != (1, expected.1)
            {
                return Err(Error::Config(format!("extractor layer {i} has wrong shape")));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, head) in self.heads.iter().enumerate() {
            let expected = (self.feature_dim(), head.width());
            if head.class_ids.is_empty()
                || head.weight.0 >= self.params.len()
                || head.bias.0 >= self.params.len()
                || self.params.value(head.weight).shape() != expected
                || self.params.value(head.bias).shape() != (1, expected.1)
            {
                return Err(Error::Config(format!("head {i} has wrong shape")));
            }
            if !head.class_ids.iter().all(|c| seen.insert(*c)) {
                return Err(Error::Config(format!("head {i} repeats a class id")));
            }
        }
        Ok(())
    }
}

/// Frozen copy of a network whose first `old_heads` heads supply distillation
/// targets.
#[derive(Debug, Clone)]
pub struct TeacherSnapshot {
    net: IncrementalNet,
    old_heads: usize,
}

impl TeacherSnapshot {
    /// Freezes `net` as it is now; every current head counts as old.
    pub fn capture(net: &IncrementalNet) -> Self {
        TeacherSnapshot {
            net: net.clone(),
            old_heads: net.heads.len(),
        }
    }

    pub fn old_heads(&self) -> usize {
        self.old_heads
    }

    pub fn net(&self) -> &IncrementalNet {
        &self.net
    }

    /// Logits of the old heads only; empty when there are none.
    pub fn teacher_logits(&self, batch: &Matrix) -> Result<Vec<Matrix>> {
        if self.old_heads == 0 {
            return Ok(Vec::new());
        }
        let features = self.net.features(batch)?;
        (0..self.old_heads)
            .map(|h| self.net.head_logits(h, &features))
            .collect()
    }
}
