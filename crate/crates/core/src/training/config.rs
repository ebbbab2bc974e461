use crate::error::{Error, Result};
use crate::layers::NoiseConfig;

use super::OptimizerKind;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Global L2 gradient-norm threshold.
    pub clip: f64,
    pub optimizer: OptimizerKind,
    pub update_scale: f64,
    pub dropout: f64,
    pub weight_noise: f64,
    pub max_updates: usize,
    pub eval_interval: usize,
    pub patience: usize,
    pub seed: u64,
    /// Beam width used to decode the development set.
    pub dev_beam: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 80,
            clip: 5.0,
            optimizer: OptimizerKind::adadelta(),
            update_scale: 1.0,
            dropout: 0.5,
            weight_noise: 0.001,
            max_updates: 100_000,
            eval_interval: 1000,
            patience: 10,
            seed: 1234,
            dev_beam: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            return Err(Error::Config(format!(
                "clip must be > 0, got {}",
                self.clip
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be at least 1".into()));
        }
        if self.dev_beam == 0 {
            return Err(Error::Config("dev_beam must be at least 1".into()));
        }
        if self.update_scale.is_nan() || self.update_scale <= 0.0 {
            return Err(Error::Config("update_scale must be > 0".into()));
        }
        NoiseConfig::new(self.dropout, self.weight_noise)?;
        Ok(())
    }

    pub fn noise(&self) -> Result<NoiseConfig> {
        NoiseConfig::new(self.dropout, self.weight_noise)
    }
}

/// Deep-fusion finetuning: the shared training settings plus the
/// regularization schedule. Only the fused output layer and the controller
/// are ever trained.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub train: TrainConfig,
    /// Updates after which dropout and weight noise are reduced.
    pub reduce_after: usize,
    pub reduce_factor: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            train: TrainConfig {
                dropout: 0.56,
                weight_noise: 0.005,
                update_scale: 0.01,
                ..TrainConfig::default()
            },
            reduce_after: 10_000,
            reduce_factor: 0.5,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.reduce_factor) {
            return Err(Error::Config(format!(
                "reduce_factor must be in [0, 1], got {}",
                self.reduce_factor
            )));
        }
        Ok(())
    }

    /// Regularization active at `update` (1-based).
    pub fn noise_at(&self, update: usize) -> Result<NoiseConfig> {
        let k = if update > self.reduce_after {
            self.reduce_factor
        } else {
            1.0
        };
        NoiseConfig::new(self.train.dropout * k, self.train.weight_noise * k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_switches_after_ten_thousand() {
        let f = FinetuneConfig::default();
        let a = f.noise_at(10_000).unwrap();
        assert_eq!((a.dropout, a.weight_noise), (0.56, 0.005));
        let b = f.noise_at(10_001).unwrap();
        assert_eq!((b.dropout, b.weight_noise), (0.28, 0.0025));
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = [
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                clip: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                patience: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                dropout: 1.0,
                ..TrainConfig::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
        assert!(TrainConfig::default().validate().is_ok());
    }
}
