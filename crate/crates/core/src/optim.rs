//! Mini-batch SGD with momentum, weight decay, annealed gradient noise and a
//! step-decay learning-rate schedule.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Gradients, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub lr_drop_factor: f64,
    pub lr_drop_every: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Initial gradient-noise variance.
    pub noise_eta: f64,
    /// Annealing exponent of the gradient-noise variance.
    pub noise_gamma: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 0.1,
            lr_drop_factor: 10.0,
            lr_drop_every: 10,
            momentum: 0.9,
            weight_decay: 1e-4,
            noise_eta: 0.3,
            noise_gamma: 0.55,
            batch_size: 128,
        }
    }
}

impl OptimizerConfig {
    /// Same schedule, different starting rate.
    pub fn with_base_lr(self, base_lr: f64) -> Self {
        OptimizerConfig { base_lr, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be > 0, got {}", self.base_lr));
        }
        if !(self.lr_drop_factor > 1.0 && self.lr_drop_factor.is_finite()) {
            return bad(format!("lr_drop_factor must be > 1, got {}", self.lr_drop_factor));
        }
        if self.lr_drop_every == 0 {
            return bad("lr_drop_every must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.noise_eta >= 0.0 && self.noise_eta.is_finite()) {
            return bad(format!("noise_eta must be >= 0, got {}", self.noise_eta));
        }
        if !(self.noise_gamma >= 0.0 && self.noise_gamma.is_finite()) {
            return bad(format!("noise_gamma must be >= 0, got {}", self.noise_gamma));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        Ok(())
    }
}

/// `base_lr · factor^(-⌊epoch / every⌋)`.
pub fn lr_schedule(epoch: usize, config: &OptimizerConfig) -> f64 {
    let drops = (epoch / config.lr_drop_every.max(1)) as i32;
    config.base_lr * config.lr_drop_factor.powi(-drops)
}

/// Variance of the gradient noise at epoch `t`: `η / (1 + t)^γ`.
pub fn noise_variance(epoch: usize, config: &OptimizerConfig) -> f64 {
    config.noise_eta / (1.0 + epoch as f64).powf(config.noise_gamma)
}

/// One in-place update of every parameter:
///
/// ```text
/// g ← g + N(0, η/(1+t)^γ)
/// v ← momentum·v − lr·(g + weight_decay·w)
/// w ← w + v
/// ```
///
/// No random numbers are drawn when the noise variance is zero.
pub fn sgd_step<R: Rng + ?Sized>(
    params: &mut ParameterSet,
    grads: &Gradients,
    config: &OptimizerConfig,
    epoch: usize,
    rng: &mut R,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::dim(
            "sgd_step",
            format!("{} parameters", params.len()),
            format!("{} gradients", grads.len()),
        ));
    }
    for ((_, p), (id, g)) in params.iter().zip(grads.iter()) {
        p.value().same_shape(g, "sgd_step")?;
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for `{}` (parameter #{})",
                p.name(),
                id.0
            )));
        }
    }

    let lr = lr_schedule(epoch, config);
    let std = noise_variance(epoch, config).sqrt();
    for (p, g) in params.iter_mut().zip(grads.iter().map(|(_, g)| g)) {
        let (w, v) = p.value_and_velocity_mut();
        for ((wi, vi), &gi) in w
            .values_mut()
            .iter_mut()
            .zip(v.values_mut().iter_mut())
            .zip(g.values())
        {
            let noisy = if std > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                gi + std * z
            } else {
                gi
            };
            *vi = config.momentum * *vi - lr * (noisy + config.weight_decay * *wi);
            *wi += *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quiet(base_lr: f64) -> OptimizerConfig {
        OptimizerConfig {
            base_lr,
            lr_drop_factor: 10.0,
            lr_drop_every: 1_000_000,
            momentum: 0.0,
            weight_decay: 0.0,
            noise_eta: 0.0,
            noise_gamma: 0.55,
            batch_size: 1,
        }
    }

    #[test]
    fn schedule_values() {
        let cfg = OptimizerConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 0.1);
        assert!((lr_schedule(10, &cfg) - 0.01).abs() < 1e-15);
        assert!((lr_schedule(20, &cfg) - 0.001).abs() < 1e-15);
        assert!((lr_schedule(39, &cfg) - 0.0001).abs() < 1e-15);
        for e in 0..100 {
            assert!(lr_schedule(e + 1, &cfg) <= lr_schedule(e, &cfg));
        }
    }

    #[test]
    fn noise_variance_at_first_epoch_is_eta() {
        let cfg = OptimizerConfig::default();
        assert_eq!(noise_variance(0, &cfg), 0.3);
        assert!(noise_variance(9, &cfg) < 0.3);
    }

    #[test]
    fn plain_step_subtracts_gradient() {
        let mut params = ParameterSet::new();
        let id = params.add("w", Matrix::from_rows(&[[1.0, -2.0]]).unwrap()).unwrap();
        let mut grads = Gradients::zeros_like(&params);
        *grads.get_mut(id) = Matrix::from_rows(&[[0.25, 0.5]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        sgd_step(&mut params, &grads, &quiet(1.0), 0, &mut rng).unwrap();
        assert_eq!(params.value(id).values(), &[0.75, -2.5]);
    }

    #[test]
    fn full_rule_converges_on_quadratic() {
        // f(w) = 0.5·a·(w − c)², with decay λ the fixed point is a·c / (a + λ).
        let (a, c) = (2.0, 3.0);
        let cfg = OptimizerConfig {
            momentum: 0.5,
            weight_decay: 1e-2,
            ..quiet(0.1)
        };
        let mut params = ParameterSet::new();
        let id = params.add("w", Matrix::zeros(1, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let w = params.value(id).get(0, 0);
            let mut grads = Gradients::zeros_like(&params);
            grads.get_mut(id).set(0, 0, a * (w - c));
            sgd_step(&mut params, &grads, &cfg, 0, &mut rng).unwrap();
        }
        let target = a * c / (a + cfg.weight_decay);
        assert!((params.value(id).get(0, 0) - target).abs() < 1e-3);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut params = ParameterSet::new();
        let id = params.add("w", Matrix::zeros(1, 1)).unwrap();
        let mut grads = Gradients::zeros_like(&params);
        grads.get_mut(id).set(0, 0, f64::NAN);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sgd_step(&mut params, &grads, &quiet(1.0), 0, &mut rng).unwrap_err();
        assert!(err.to_string().contains("`w`"));
    }

    #[test]
    fn validation_rejects_bad_values() {
        let ok = OptimizerConfig::default();
        assert!(ok.validate().is_ok());
        assert!(OptimizerConfig { base_lr: 0.0, ..ok }.validate().is_err());
        assert!(OptimizerConfig { lr_drop_factor: 1.0, ..ok }.validate().is_err());
        assert!(OptimizerConfig { momentum: 1.0, ..ok }.validate().is_err());
    }
}
