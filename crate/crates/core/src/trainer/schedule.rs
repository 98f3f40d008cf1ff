use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::LossWeights;

/// Optimisation schedule and data-sampling settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_decay_every: u64,
    pub lr_decay_factor: f64,
    pub max_steps: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// LR patch edge length.
    pub patch_size: usize,
    /// Steps between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub weights: LossWeights,
}

impl TrainConfig {
    /// Full schedule: batch 32, 200K steps, learning rate /10 every 80K.
    pub fn paper() -> Self {
        Self {
            batch_size: 32,
            lr_initial: 1e-3,
            lr_decay_every: 80_000,
            lr_decay_factor: 10.0,
            max_steps: 200_000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            patch_size: 32,
            checkpoint_every: 10_000,
            weights: LossWeights::default(),
        }
    }

    /// Short schedule for CPU experiments.
    pub fn desk() -> Self {
        Self {
            batch_size: 8,
            lr_decay_every: 1_600,
            max_steps: 2_000,
            patch_size: 24,
            checkpoint_every: 500,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("lr_initial", self.lr_initial),
            ("lr_decay_every", self.lr_decay_every as f64),
            ("max_steps", self.max_steps as f64),
            ("adam_epsilon", self.adam_epsilon),
            ("patch_size", self.patch_size as f64),
        ];
        for (key, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{key} must be positive")));
            }
        }
        if !(self.lr_decay_factor > 1.0) {
            return Err(Error::Config("lr_decay_factor must exceed 1".into()));
        }
        for (key, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{key} must lie in [0, 1)")));
            }
        }
        self.weights.validate()
    }
}

/// `lr_initial / lr_decay_factor ^ floor(step / lr_decay_every)`.
pub fn learning_rate(step: u64, cfg: &TrainConfig) -> f64 {
    let drops = (step / cfg.lr_decay_every) as i32;
    cfg.lr_initial / cfg.lr_decay_factor.powi(drops)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_schedule() {
        let cfg = TrainConfig::paper();
        assert_eq!(learning_rate(0, &cfg), 1e-3);
        assert!((learning_rate(79_999, &cfg) - 1e-3).abs() < 1e-18);
        assert!((learning_rate(80_000, &cfg) - 1e-4).abs() < 1e-18);
        assert!((learning_rate(160_001, &cfg) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::paper().validate().is_ok());
        let bad = TrainConfig {
            lr_decay_factor: 1.0,
            ..TrainConfig::desk()
        };
        assert!(bad.validate().is_err());
    }
}
