//! Beam search with optional shallow or deep fusion, unknown-word
//! replacement and gate statistics.

mod beam;
mod gates;
mod shallow;
mod unk;

pub use beam::{
    beam_step, greedy_decode, score_sequence, translate, BeamConfig, FusionMode, Hypothesis,
    Models, Translation,
};
pub use gates::{gate_stats, GateStats};
pub use shallow::{lm_renormalize, shallow_score, Renormalized, ShallowConfig};
pub use unk::replace_unk;

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::eval::bleu;
use crate::scalar::Scalar;

/// Translates every sentence in order.
pub fn translate_corpus<T: Scalar>(
    sources: &[Vec<usize>],
    models: &Models<'_, T>,
    cfg: &BeamConfig,
) -> Result<Vec<Translation<T>>> {
    sources.iter().map(|s| translate(s, models, cfg)).collect()
}

/// Surface tokens of each translation's words.
pub fn detokenize_all<T: Scalar>(
    translations: &[Translation<T>],
    vocab: &Vocabulary,
) -> Result<Vec<Vec<String>>> {
    translations
        .iter()
        .map(|t| vocab.decode(t.words()))
        .collect()
}

/// `n` values spaced evenly in log scale from 0.001 to 0.1.
pub fn beta_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.001],
        _ => (0..n)
            .map(|i| 10f64.powf(-3.0 + 2.0 * i as f64 / (n - 1) as f64))
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    pub bleu: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaSweep {
    pub rows: Vec<SweepRow>,
    /// Index of the first row with the highest BLEU.
    pub best: usize,
}

impl BetaSweep {
    pub fn best_row(&self) -> &SweepRow {
        &self.rows[self.best]
    }
}

/// Shallow-fusion BLEU on a development set for each `beta`.
pub fn sweep_beta<T: Scalar>(
    sources: &[Vec<usize>],
    references: &[Vec<String>],
    models: &Models<'_, T>,
    beam: usize,
    betas: &[f64],
    vocab: &Vocabulary,
) -> Result<BetaSweep> {
    if betas.is_empty() {
        return Err(Error::Config("empty beta grid".into()));
    }
    let mut rows = Vec::with_capacity(betas.len());
    for &beta in betas {
        let cfg = BeamConfig::new(beam, FusionMode::Shallow(ShallowConfig::new(beta)?))?;
        let out = translate_corpus(sources, models, &cfg)?;
        let hyps = detokenize_all(&out, vocab)?;
        rows.push(SweepRow {
            beta,
            bleu: bleu(&hyps, references)?.score,
        });
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.bleu > rows[best].bleu {
            best = i;
        }
    }
    Ok(BetaSweep { rows, best })
}
