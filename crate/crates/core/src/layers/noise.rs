use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Training-time regularization: dropout on the deep-output hidden layer and
/// additive Gaussian weight noise on the output-layer parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    pub dropout: f64,
    pub weight_noise: f64,
    pub active: bool,
}

impl NoiseConfig {
    pub fn new(dropout: f64, weight_noise: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {dropout}"
            )));
        }
        if weight_noise < 0.0 || !weight_noise.is_finite() {
            return Err(Error::Config(format!(
                "weight noise std must be >= 0, got {weight_noise}"
            )));
        }
        Ok(NoiseConfig {
            dropout,
            weight_noise,
            active: true,
        })
    }

    pub fn inference() -> Self {
        NoiseConfig {
            dropout: 0.0,
            weight_noise: 0.0,
            active: false,
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.active || (self.dropout == 0.0 && self.weight_noise == 0.0)
    }
}

/// Inverted-dropout mask of length `n`: each entry is `0` with probability
/// `p`, otherwise `1/(1-p)`. `None` when dropout is off.
pub fn dropout_mask<T: Scalar, R: Rng>(
    cfg: &NoiseConfig,
    n: usize,
    rng: &mut R,
) -> Option<Tensor<T>> {
    if !cfg.active || cfg.dropout == 0.0 {
        return None;
    }
    let keep = 1.0 - cfg.dropout;
    let scale = T::of(1.0 / keep);
    let data = (0..n)
        .map(|_| {
            if rng.random::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        })
        .collect();
    Some(Tensor::from_parts(vec![n], data))
}

/// `t + N(0, σ²)` elementwise; returns `t` unchanged when noise is off.
pub fn perturb<T: Scalar, R: Rng>(cfg: &NoiseConfig, t: &Tensor<T>, rng: &mut R) -> Tensor<T> {
    if !cfg.active || cfg.weight_noise == 0.0 {
        return t.clone();
    }
    let std = cfg.weight_noise;
    let data = t
        .data()
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            v + T::of(z * std)
        })
        .collect();
    Tensor::from_parts(t.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn disabled_noise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Tensor::<f64>::vector(vec![1.0, -2.0, 3.5]);
        let off = NoiseConfig::new(0.0, 0.0).unwrap();
        assert!(dropout_mask::<f64, _>(&off, 3, &mut rng).is_none());
        assert_eq!(perturb(&off, &t, &mut rng), t);
        let mut inf = NoiseConfig::new(0.5, 0.1).unwrap();
        inf.active = false;
        assert!(dropout_mask::<f64, _>(&inf, 3, &mut rng).is_none());
        assert_eq!(perturb(&inf, &t, &mut rng), t);
        assert!(NoiseConfig::inference().is_identity());
    }

    #[test]
    fn inverted_dropout_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cfg = NoiseConfig::new(0.5, 0.0).unwrap();
        let m: Tensor<f64> = dropout_mask(&cfg, 100_000, &mut rng).unwrap();
        let mean = m.sum() / m.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn weight_noise_has_requested_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = NoiseConfig::new(0.0, 0.001).unwrap();
        let t = Tensor::<f64>::zeros(&[50_000]);
        let p = perturb(&cfg, &t, &mut rng);
        let std = (p.sq_norm() / p.len() as f64).sqrt();
        assert!((std - 0.001).abs() < 2e-5);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(NoiseConfig::new(1.0, 0.0).is_err());
        assert!(NoiseConfig::new(-0.1, 0.0).is_err());
        assert!(NoiseConfig::new(0.2, -1.0).is_err());
    }
}
