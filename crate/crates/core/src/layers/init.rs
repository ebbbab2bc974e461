use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Seeded source of initial parameter values.
pub struct ParamInit {
    rng: ChaCha8Rng,
    /// Standard deviation for non-recurrent weights.
    pub std: f64,
}

impl ParamInit {
    pub fn new(seed: u64) -> Self {
        ParamInit {
            rng: ChaCha8Rng::seed_from_u64(seed),
            std: 0.01,
        }
    }

    pub fn with_std(seed: u64, std: f64) -> Self {
        ParamInit {
            rng: ChaCha8Rng::seed_from_u64(seed),
            std,
        }
    }

    pub fn gaussian<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let std = self.std;
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                T::of(z * std)
            })
            .collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    pub fn orthonormal<T: Scalar>(&mut self, d: usize) -> Tensor<T> {
        orthonormal(&mut self.rng, d)
    }

    /// `blocks` independent orthonormal `d×d` matrices stacked vertically.
    pub fn orthonormal_stack<T: Scalar>(&mut self, blocks: usize, d: usize) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(blocks * d * d);
        for _ in 0..blocks {
            data.extend_from_slice(self.orthonormal::<T>(d).data());
        }
        Tensor::matrix(blocks * d, d, data)
    }
}

/// Random orthonormal matrix: modified Gram-Schmidt (applied twice) on the
/// columns of a Gaussian matrix, computed in `f64`.
pub fn orthonormal<T: Scalar, R: rand::Rng>(rng: &mut R, d: usize) -> Tensor<T> {
    // columns stored contiguously
    let mut cols: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect())
        .collect();
    for j in 0..d {
        for _pass in 0..2 {
            for k in 0..j {
                let proj: f64 = (0..d).map(|i| cols[j][i] * cols[k][i]).sum();
                let (head, tail) = cols.split_at_mut(j);
                for (x, y) in tail[0].iter_mut().zip(&head[k]) {
                    *x -= proj * y;
                }
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut cols[j] {
            *v /= norm;
        }
    }
    let mut data = vec![T::zero(); d * d];
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            data[i * d + j] = T::of(v);
        }
    }
    Tensor::from_parts(vec![d, d], data)
}
