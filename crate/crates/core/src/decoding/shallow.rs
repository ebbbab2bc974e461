use crate::data::{EOS, UNK};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Language-model weight and the tokens whose language-model term is
/// dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct ShallowConfig {
    pub beta: f64,
    pub exclude: Vec<usize>,
}

impl ShallowConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be a finite value >= 0, got {beta}"
            )));
        }
        Ok(ShallowConfig {
            beta,
            exclude: vec![EOS, UNK],
        })
    }
}

/// A language-model distribution renormalized over the non-excluded tokens.
/// Excluded entries hold zero and are flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct Renormalized<T> {
    pub log_probs: Tensor<T>,
    pub excluded: Vec<bool>,
}

pub fn lm_renormalize<T: Scalar>(
    lm_logp: &Tensor<T>,
    exclusion: &[usize],
) -> Result<Renormalized<T>> {
    let n = lm_logp.len();
    let mut excluded = vec![false; n];
    for &k in exclusion {
        if k >= n {
            return Err(Error::Vocab { id: k, size: n });
        }
        excluded[k] = true;
    }
    if excluded.iter().all(|&e| e) {
        return Err(Error::Domain(
            "exclusion set covers the whole vocabulary".into(),
        ));
    }
    if !excluded.iter().any(|&e| e) {
        return Ok(Renormalized {
            log_probs: lm_logp.clone(),
            excluded,
        });
    }
    let data = lm_logp.data();
    let max = data
        .iter()
        .zip(&excluded)
        .filter(|(_, &e)| !e)
        .map(|(&v, _)| v)
        .fold(T::neg_infinity(), T::max);
    let z: T = data
        .iter()
        .zip(&excluded)
        .filter(|(_, &e)| !e)
        .map(|(&v, _)| (v - max).exp())
        .sum();
    let log_z = max + z.ln();
    let out = data
        .iter()
        .zip(&excluded)
        .map(|(&v, &e)| if e { T::zero() } else { v - log_z })
        .collect();
    Ok(Renormalized {
        log_probs: Tensor::vector(out),
        excluded,
    })
}

/// `tm + β·lm`, with excluded tokens scored by `tm` alone.
pub fn shallow_score<T: Scalar>(
    tm_logp: &Tensor<T>,
    lm: &Renormalized<T>,
    beta: f64,
) -> Result<Tensor<T>> {
    if tm_logp.shape() != lm.log_probs.shape() {
        return Err(Error::dim(
            "shallow_score",
            tm_logp.shape(),
            lm.log_probs.shape(),
        ));
    }
    let b = T::of(beta);
    let out = tm_logp
        .data()
        .iter()
        .zip(lm.log_probs.data())
        .zip(&lm.excluded)
        .map(|((&t, &l), &e)| if e { t } else { t + b * l })
        .collect();
    Ok(Tensor::vector(out))
}
