use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::scalar::Scalar;

/// Rescales all trainable gradients so their global L2 norm is at most
/// `threshold`. Returns the norm before clipping.
pub fn clip_gradients<T: Scalar>(params: &mut ParameterSet<T>, threshold: f64) -> Result<T> {
    if let Some(p) = params.iter().find(|p| p.trainable && !p.grad.all_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient in {}", p.id)));
    }
    let norm = params.grad_norm();
    if norm.as_f64() > threshold {
        let k = T::of(threshold) / norm;
        for p in params.iter_mut().filter(|p| p.trainable) {
            for g in p.grad.data_mut() {
                *g *= k;
            }
        }
    }
    Ok(norm)
}
