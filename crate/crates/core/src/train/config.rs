use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use crate::data::Task;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Weight of MSE against CCC loss in the VA objective.
    pub lambda: f64,
    pub eval_every: usize,
    pub checkpoint: Option<String>,
    /// Window stride for training batches; defaults to the window length.
    pub stride: Option<usize>,
    pub val_fraction: f64,
    pub au_threshold: f64,
    /// Run the finite-difference suite on a small model before training.
    pub verify_gradients: bool,
    /// Relative drop of the training loss that counts as converged.
    pub min_loss_drop: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Va,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            lambda: 0.5,
            eval_every: 1,
            checkpoint: None,
            stride: None,
            val_fraction: 0.2,
            au_threshold: 0.5,
            verify_gradients: true,
            min_loss_drop: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("beta1, beta2 must lie in [0, 1), got {}, {}", self.beta1, self.beta2));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return bad("batch_size, epochs and eval_every must be positive".into());
        }
        if self.stride == Some(0) {
            return bad("stride must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        if !(0.0..=1.0).contains(&self.au_threshold) {
            return bad(format!("au_threshold must lie in [0, 1], got {}", self.au_threshold));
        }
        if !(0.0..=1.0).contains(&self.min_loss_drop) {
            return bad(format!("min_loss_drop must lie in [0, 1], got {}", self.min_loss_drop));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        let c = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            lr: -1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            lr: 0.0,
            ..Default::default()
        };
        c.validate().unwrap();
    }
}
