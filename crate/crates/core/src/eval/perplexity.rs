use crate::error::{Error, Result};
use crate::models::RnnLm;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct PerplexityReport {
    pub log_prob: f64,
    /// Scored tokens, end-of-sequence included.
    pub tokens: usize,
    pub perplexity: f64,
}

impl PerplexityReport {
    pub fn from_totals(log_prob: f64, tokens: usize) -> Result<Self> {
        if tokens == 0 {
            return Err(Error::Data("perplexity of an empty corpus".into()));
        }
        Ok(PerplexityReport {
            log_prob,
            tokens,
            perplexity: (-log_prob / tokens as f64).exp(),
        })
    }
}

/// Perplexity of `lm` on end-of-sequence terminated sentences. Token
/// log-probabilities are added with Neumaier compensation.
pub fn perplexity<T: Scalar>(lm: &RnnLm<T>, corpus: &[Vec<usize>]) -> Result<PerplexityReport> {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    let mut tokens = 0;
    for s in corpus {
        for lp in lm.token_log_probs(s)? {
            let x = lp.as_f64();
            let t = sum + x;
            comp += if sum.abs() >= x.abs() {
                (sum - t) + x
            } else {
                (x - t) + sum
            };
            sum = t;
            tokens += 1;
        }
    }
    PerplexityReport::from_totals(sum + comp, tokens)
}
