//! Experiment configuration files (TOML).
//!
//! Every table except `[dataset]` may be omitted; missing keys take the
//! defaults of the original training recipe. Unknown keys are rejected.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{AugmentRecipe, NormalizationMode, SyntheticSpec};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::memory::{MemoryMode, SelectionStrategy};
use crate::optim::OptimizerConfig;
use crate::pipeline::{Ablation, StepConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub step_size: usize,
    /// Also train a non-incremental model on every class for reference.
    #[serde(default)]
    pub upper_bound: bool,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub normalization: Option<NormalizationMode>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub memory: MemoryConfig,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub augmentation: AugmentationConfig,
    #[serde(default)]
    pub ablation: Ablation,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        num_classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        separation: f64,
        seed: u64,
    },
    /// `label,x1,...,xd` files.
    Csv { train: PathBuf, test: PathBuf },
    CifarBinary {
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
    },
}

impl DatasetConfig {
    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        match *self {
            DatasetConfig::Synthetic {
                num_classes,
                dim,
                train_per_class,
                test_per_class,
                separation,
                seed,
            } => Some(SyntheticSpec {
                num_classes,
                dim,
                train_per_class,
                test_per_class,
                separation,
                seed,
            }),
            _ => None,
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetConfig::Synthetic { .. } => {}
            DatasetConfig::Csv { train, test } => {
                fix(train);
                fix(test);
            }
            DatasetConfig::CifarBinary { train, test } => {
                train.iter_mut().chain(test.iter_mut()).for_each(fix);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths of the ReLU extractor; empty means raw inputs
    /// feed the heads directly.
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: vec![64, 32] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryModeKind {
    FixedTotal,
    FixedPerClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Herding,
    NearestMeanSort,
    Random,
    Histogram,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryConfig {
    #[serde(default = "default_mode")]
    pub mode: MemoryModeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    #[serde(default = "default_strategy")]
    pub strategy: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy_seed: Option<u64>,
}

fn default_mode() -> MemoryModeKind {
    MemoryModeKind::FixedTotal
}

fn default_strategy() -> StrategyKind {
    StrategyKind::Herding
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            mode: MemoryModeKind::FixedTotal,
            capacity: Some(2000),
            per_class: None,
            strategy: StrategyKind::Herding,
            strategy_seed: None,
        }
    }
}

impl MemoryConfig {
    pub fn mode(&self) -> Result<MemoryMode> {
        match (self.mode, self.capacity, self.per_class) {
            (MemoryModeKind::FixedTotal, Some(capacity), None) => Ok(MemoryMode::FixedTotal { capacity }),
            (MemoryModeKind::FixedPerClass, None, Some(per_class)) => {
                Ok(MemoryMode::FixedPerClass { per_class })
            }
            (MemoryModeKind::FixedTotal, _, _) => Err(Error::Config(
                "memory.capacity is required (and memory.per_class not allowed) for fixed-total".into(),
            )),
            (MemoryModeKind::FixedPerClass, _, _) => Err(Error::Config(
                "memory.per_class is required (and memory.capacity not allowed) for fixed-per-class"
                    .into(),
            )),
        }
    }

    pub fn strategy(&self) -> Result<SelectionStrategy> {
        match (self.strategy, self.strategy_seed) {
            (StrategyKind::Random, Some(seed)) => Ok(SelectionStrategy::Random { seed }),
            (StrategyKind::Random, None) => Ok(SelectionStrategy::Random { seed: 0 }),
            (_, Some(_)) => Err(Error::Config(
                "memory.strategy_seed only applies to strategy = \"random\"".into(),
            )),
            (StrategyKind::Herding, None) => Ok(SelectionStrategy::Herding),
            (StrategyKind::NearestMeanSort, None) => Ok(SelectionStrategy::NearestMeanSort),
            (StrategyKind::Histogram, None) => Ok(SelectionStrategy::Histogram),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub temperature: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            temperature: LossConfig::default().temperature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub base_lr: f64,
    pub finetune_lr: f64,
    pub lr_drop_factor: f64,
    pub lr_drop_every: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub noise_eta: f64,
    pub noise_gamma: f64,
    pub batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        let step = StepConfig::default();
        TrainingConfig {
            epochs: step.epochs,
            finetune_epochs: step.finetune_epochs,
            base_lr: opt.base_lr,
            finetune_lr: step.finetune_lr,
            lr_drop_factor: opt.lr_drop_factor,
            lr_drop_every: opt.lr_drop_every,
            momentum: opt.momentum,
            weight_decay: opt.weight_decay,
            noise_eta: opt.noise_eta,
            noise_gamma: opt.noise_gamma,
            batch_size: opt.batch_size,
        }
    }
}

impl TrainingConfig {
    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            base_lr: self.base_lr,
            lr_drop_factor: self.lr_drop_factor,
            lr_drop_every: self.lr_drop_every,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            noise_eta: self.noise_eta,
            noise_gamma: self.noise_gamma,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecipeKind {
    None,
    Cifar11,
    ImagenetStyle,
    VectorJitter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    pub recipe: RecipeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub copies: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            recipe: RecipeKind::None,
            crop_padding: None,
            copies: None,
            scale: None,
        }
    }
}

impl AugmentationConfig {
    pub fn recipe(&self) -> Result<AugmentRecipe> {
        let extra = |field: &str| {
            Err(Error::Config(format!(
                "augmentation.{field} does not apply to recipe {:?}",
                self.recipe
            )))
        };
        match self.recipe {
            RecipeKind::None | RecipeKind::ImagenetStyle => {
                if self.crop_padding.is_some() {
                    return extra("crop_padding");
                }
                if self.copies.is_some() {
                    return extra("copies");
                }
                if self.scale.is_some() {
                    return extra("scale");
                }
                Ok(if self.recipe == RecipeKind::None {
                    AugmentRecipe::None
                } else {
                    AugmentRecipe::ImagenetStyle
                })
            }
            RecipeKind::Cifar11 => {
                if self.copies.is_some() {
                    return extra("copies");
                }
                if self.scale.is_some() {
                    return extra("scale");
                }
                Ok(AugmentRecipe::Cifar11 {
                    crop_padding: self.crop_padding.unwrap_or(4),
                })
            }
            RecipeKind::VectorJitter => {
                if self.crop_padding.is_some() {
                    return extra("crop_padding");
                }
                Ok(AugmentRecipe::VectorJitter {
                    copies: self.copies.unwrap_or(1),
                    scale: self.scale.unwrap_or(0.1),
                })
            }
        }
    }
}

/// One finding from [`ExperimentConfig::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Validation {
    pub errors: Vec<Diagnostic>,
    pub warnings: Vec<Diagnostic>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, field: &str, message: impl Into<String>) {
        self.errors.push(Diagnostic {
            field: field.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, field: &str, message: impl Into<String>) {
        self.warnings.push(Diagnostic {
            field: field.into(),
            message: message.into(),
        });
    }

    /// The errors as a single configuration error, if any.
    pub fn into_result(self) -> Result<Vec<Diagnostic>> {
        if self.errors.is_empty() {
            Ok(self.warnings)
        } else {
            let lines: Vec<String> = self.errors.iter().map(ToString::to_string).collect();
            Err(Error::Config(lines.join("; ")))
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses `path`; relative dataset paths are taken from its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.resolve_paths(base);
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the canonical serialization.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml_string()?.as_bytes())))
    }

    pub fn normalization_mode(&self) -> NormalizationMode {
        self.normalization.unwrap_or(match self.dataset {
            DatasetConfig::CifarBinary { .. } => NormalizationMode::ScaleAndCenter,
            _ => NormalizationMode::Standardize,
        })
    }

    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            optimizer: self.training.optimizer(),
            epochs: self.training.epochs,
            finetune_epochs: self.training.finetune_epochs,
            finetune_lr: self.training.finetune_lr,
            loss: LossConfig {
                temperature: self.loss.temperature,
            },
            ablation: self.ablation,
        }
    }

    /// Schema and semantic checks. Nothing here touches the file system.
    pub fn validate(&self) -> Validation {
        let mut v = Validation::default();
        if self.name.trim().is_empty() {
            v.error("name", "must not be empty");
        }
        if self.seeds.is_empty() {
            v.error("seeds", "at least one seed is required");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            v.error("seeds", "seeds must be distinct");
        }
        if self.step_size == 0 {
            v.error("step_size", "must be >= 1");
        }
        if self.model.hidden.contains(&0) {
            v.error("model.hidden", "layer widths must be >= 1");
        }
        if !(self.loss.temperature > 0.0 && self.loss.temperature.is_finite()) {
            v.error("loss.temperature", format!("must be > 0, got {}", self.loss.temperature));
        }
        if let Err(Error::Config(m)) = self.training.optimizer().validate() {
            v.error("training", m);
        }
        if !(self.training.finetune_lr > 0.0 && self.training.finetune_lr.is_finite()) {
            v.error("training.finetune_lr", "must be > 0");
        }
        let mode = match self.memory.mode() {
            Ok(m) => Some(m),
            Err(e) => {
                v.error("memory", strip(e));
                None
            }
        };
        if let Err(e) = self.memory.strategy() {
            v.error("memory.strategy_seed", strip(e));
        }
        let recipe = match self.augmentation.recipe() {
            Ok(r) => Some(r),
            Err(e) => {
                v.error("augmentation", strip(e));
                None
            }
        };
        if let Some(AugmentRecipe::VectorJitter { scale, .. }) = recipe {
            if !(scale >= 0.0 && scale.is_finite()) {
                v.error("augmentation.scale", "must be finite and >= 0");
            }
        }
        match &self.dataset {
            DatasetConfig::Synthetic { .. } => {
                let spec = self.dataset.synthetic_spec().expect("synthetic");
                if let Err(e) = spec.validate() {
                    v.error("dataset", strip(e));
                }
                if spec.test_per_class == 0 {
                    v.error("dataset.test_per_class", "must be >= 1");
                }
                if matches!(recipe, Some(AugmentRecipe::Cifar11 { .. } | AugmentRecipe::ImagenetStyle)) {
                    v.error("augmentation.recipe", "image recipes need image data");
                }
                if matches!(
                    self.normalization_mode(),
                    NormalizationMode::ScaleAndCenter | NormalizationMode::CenterOnly
                ) {
                    v.error("normalization", "image normalization needs image data");
                }
                let c = spec.num_classes;
                if self.step_size > c {
                    v.warn("step_size", format!("larger than the {c} classes; one batch will be used"));
                } else if self.step_size > 0 && c % self.step_size != 0 {
                    v.warn("step_size", format!("does not divide the {c} classes; the last batch is smaller"));
                }
                if let Some(MemoryMode::FixedTotal { capacity }) = mode {
                    if capacity < c {
                        v.warn(
                            "memory.capacity",
                            format!("K = {capacity} is below the {c} classes; late classes get no exemplars"),
                        );
                    }
                }
            }
            DatasetConfig::Csv { .. } => {
                if matches!(recipe, Some(AugmentRecipe::Cifar11 { .. } | AugmentRecipe::ImagenetStyle)) {
                    v.error("augmentation.recipe", "image recipes need image data");
                }
            }
            DatasetConfig::CifarBinary { train, test } => {
                if train.is_empty() || test.is_empty() {
                    v.error("dataset", "cifar-binary needs train and test files");
                }
                if matches!(recipe, Some(AugmentRecipe::VectorJitter { .. })) {
                    v.error("augmentation.recipe", "vector-jitter needs vector data");
                }
            }
        }
        if self.ablation.finetune && !self.ablation.memory {
            v.warn("ablation.finetune", "balanced fine-tuning is skipped without memory");
        }
        v
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
