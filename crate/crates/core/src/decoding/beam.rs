use std::cmp::Ordering;

use crate::data::{BOS, EOS};
use crate::error::{Error, Result};
use crate::models::{AnnotationMatrix, FusedModel, LmState, NmtModel, RnnLm};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::shallow::{lm_renormalize, shallow_score, ShallowConfig};

#[derive(Clone, Debug, PartialEq, Default)]
pub enum FusionMode {
    #[default]
    None,
    Shallow(ShallowConfig),
    Deep,
}

impl FusionMode {
    pub fn name(&self) -> &'static str {
        match self {
            FusionMode::None => "none",
            FusionMode::Shallow(_) => "shallow",
            FusionMode::Deep => "deep",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam: usize,
    /// Defaults to `3·|source| + 5`.
    pub max_len: Option<usize>,
    pub mode: FusionMode,
    /// Rank finished hypotheses by score per token at the final pick.
    pub length_norm: bool,
}

impl BeamConfig {
    pub fn new(beam: usize, mode: FusionMode) -> Result<Self> {
        if beam == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        Ok(BeamConfig {
            beam,
            max_len: None,
            mode,
            length_norm: false,
        })
    }

    pub fn max_len_for(&self, source_len: usize) -> usize {
        self.max_len.unwrap_or(3 * source_len + 5)
    }
}

/// The models a decode may draw on. Shallow fusion needs `lm`, deep fusion
/// needs `fused`.
#[derive(Clone, Copy, Debug)]
pub struct Models<'a, T> {
    pub nmt: &'a NmtModel<T>,
    pub lm: Option<&'a RnnLm<T>>,
    pub fused: Option<&'a FusedModel<T>>,
}

impl<'a, T: Scalar> Models<'a, T> {
    pub fn new(nmt: &'a NmtModel<T>) -> Self {
        Models {
            nmt,
            lm: None,
            fused: None,
        }
    }

    pub fn with_lm(mut self, lm: &'a RnnLm<T>) -> Self {
        self.lm = Some(lm);
        self
    }

    pub fn with_fused(mut self, fused: &'a FusedModel<T>) -> Self {
        self.fused = Some(fused);
        self
    }

    /// Checks that `mode` can run on these models.
    pub fn check(&self, mode: &FusionMode) -> Result<()> {
        match mode {
            FusionMode::None => Ok(()),
            FusionMode::Shallow(_) => {
                let lm = self
                    .lm
                    .ok_or_else(|| Error::Config("shallow fusion needs a language model".into()))?;
                let nmt = &self.nmt.config;
                if nmt.tgt_vocab != lm.config.vocab {
                    return Err(Error::Config(format!(
                        "target vocabulary size {} differs from language-model vocabulary size {}",
                        nmt.tgt_vocab, lm.config.vocab
                    )));
                }
                if let (Some(a), Some(b)) = (&nmt.tgt_vocab_digest, &lm.config.vocab_digest) {
                    if a != b {
                        return Err(Error::Config(
                            "target and language-model vocabularies differ".into(),
                        ));
                    }
                }
                Ok(())
            }
            FusionMode::Deep => self
                .fused
                .map(|_| ())
                .ok_or_else(|| Error::Config("deep fusion needs a fused model".into())),
        }
    }

    fn translation_model(&self, mode: &FusionMode) -> &'a NmtModel<T> {
        match (mode, self.fused) {
            (FusionMode::Deep, Some(f)) => &f.nmt,
            _ => self.nmt,
        }
    }
}

/// A partial or finished translation.
#[derive(Clone, Debug)]
pub struct Hypothesis<T> {
    pub tokens: Vec<usize>,
    pub score: T,
    pub step_scores: Vec<T>,
    pub state: Tensor<T>,
    /// Language-model state after reading every token but the last one.
    pub lm_state: Option<LmState<T>>,
    /// One attention row per emitted token.
    pub attention: Vec<Tensor<T>>,
    pub gates: Vec<T>,
    pub finished: bool,
}

impl<T: Scalar> Hypothesis<T> {
    pub fn initial(annotations: &AnnotationMatrix<T>, lm_state: Option<LmState<T>>) -> Self {
        Hypothesis {
            tokens: Vec::new(),
            score: T::zero(),
            step_scores: Vec::new(),
            state: annotations.initial_state.clone(),
            lm_state,
            attention: Vec::new(),
            gates: Vec::new(),
            finished: false,
        }
    }

    fn last(&self) -> usize {
        self.tokens.last().copied().unwrap_or(BOS)
    }

    /// Emitted tokens without the trailing end-of-sequence.
    pub fn words(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.tokens,
        }
    }
}

/// Everything one hypothesis produces at the next step.
struct Expansion<T> {
    /// Scores used to preselect candidates.
    first: Tensor<T>,
    /// Final per-token step scores.
    scores: Tensor<T>,
    state: Tensor<T>,
    lm_state: Option<LmState<T>>,
    alpha: Tensor<T>,
    gate: Option<T>,
}

fn expand<T: Scalar>(
    h: &Hypothesis<T>,
    models: &Models<'_, T>,
    mode: &FusionMode,
    enc: &AnnotationMatrix<T>,
) -> Result<Expansion<T>> {
    let y_prev = h.last();
    match mode {
        FusionMode::None => {
            let st = models.nmt.decode_step(&h.state, y_prev, enc)?;
            Ok(Expansion {
                first: st.log_probs.clone(),
                scores: st.log_probs,
                state: st.state,
                lm_state: None,
                alpha: st.scores.alpha,
                gate: None,
            })
        }
        FusionMode::Shallow(cfg) => {
            let lm = models
                .lm
                .ok_or_else(|| Error::Config("shallow fusion needs a language model".into()))?;
            let st = models.nmt.decode_step(&h.state, y_prev, enc)?;
            let prev = h.lm_state.clone().unwrap_or_else(|| lm.initial_state());
            let (lm_state, lm_lp) = lm.step(&prev, y_prev)?;
            let renorm = lm_renormalize(&lm_lp, &cfg.exclude)?;
            let scores = shallow_score(&st.log_probs, &renorm, cfg.beta)?;
            Ok(Expansion {
                first: st.log_probs,
                scores,
                state: st.state,
                lm_state: Some(lm_state),
                alpha: st.scores.alpha,
                gate: None,
            })
        }
        FusionMode::Deep => {
            let fm = models
                .fused
                .ok_or_else(|| Error::Config("deep fusion needs a fused model".into()))?;
            let prev = h.lm_state.clone().unwrap_or_else(|| fm.lm.initial_state());
            let st = fm.fused_step(&h.state, &prev, y_prev, enc)?;
            Ok(Expansion {
                first: st.log_probs.clone(),
                scores: st.log_probs,
                state: st.state,
                lm_state: Some(st.lm_state),
                alpha: st.scores.alpha,
                gate: Some(st.gate),
            })
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    score: f64,
    token: usize,
    len: usize,
    parent: usize,
    carried: bool,
}

/// Higher score first, then lower token id, shorter hypothesis, lower
/// parent index.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.token.cmp(&b.token))
        .then(a.len.cmp(&b.len))
        .then(a.parent.cmp(&b.parent))
        .then(b.carried.cmp(&a.carried))
}

fn top_k(mut c: Vec<Candidate>, k: usize) -> Vec<Candidate> {
    c.sort_by(rank);
    c.truncate(k);
    c
}

/// One step of beam search: expands every live hypothesis over the whole
/// vocabulary, pools the expansions with the finished hypotheses and keeps
/// the best `cfg.beam`.
pub fn beam_step<T: Scalar>(
    hyps: &[Hypothesis<T>],
    models: &Models<'_, T>,
    cfg: &BeamConfig,
    enc: &AnnotationMatrix<T>,
) -> Result<Vec<Hypothesis<T>>> {
    if hyps.iter().all(|h| h.finished) {
        return Ok(hyps.to_vec());
    }
    let mut expansions: Vec<Option<Expansion<T>>> = Vec::with_capacity(hyps.len());
    let mut fresh = Vec::new();
    for (i, h) in hyps.iter().enumerate() {
        if h.finished {
            expansions.push(None);
            continue;
        }
        let e = expand(h, models, &cfg.mode, enc)?;
        let base = h.score.as_f64();
        for (k, &s) in e.first.data().iter().enumerate() {
            fresh.push(Candidate {
                score: base + s.as_f64(),
                token: k,
                len: h.tokens.len() + 1,
                parent: i,
                carried: false,
            });
        }
        expansions.push(Some(e));
    }
    let mut fresh = if let FusionMode::Shallow(_) = cfg.mode {
        // preselect on translation-model scores, then rescore the survivors
        let mut kept = top_k(fresh, cfg.beam);
        for c in &mut kept {
            let (h, e) = (
                &hyps[c.parent],
                expansions[c.parent].as_ref().expect("live parent"),
            );
            c.score = (h.score + e.scores.data()[c.token]).as_f64();
        }
        kept
    } else {
        fresh
    };
    for (i, h) in hyps.iter().enumerate().filter(|(_, h)| h.finished) {
        fresh.push(Candidate {
            score: h.score.as_f64(),
            token: h.last(),
            len: h.tokens.len(),
            parent: i,
            carried: true,
        });
    }
    let mut out = Vec::with_capacity(cfg.beam);
    for c in top_k(fresh, cfg.beam) {
        let h = &hyps[c.parent];
        if c.carried {
            out.push(h.clone());
            continue;
        }
        let e = expansions[c.parent].as_ref().expect("live parent");
        let step = e.scores.data()[c.token];
        let mut n = Hypothesis {
            tokens: h.tokens.clone(),
            score: h.score + step,
            step_scores: h.step_scores.clone(),
            state: e.state.clone(),
            lm_state: e.lm_state.clone(),
            attention: h.attention.clone(),
            gates: h.gates.clone(),
            finished: c.token == EOS,
        };
        n.tokens.push(c.token);
        n.step_scores.push(step);
        n.attention.push(e.alpha.clone());
        n.gates.extend(e.gate);
        out.push(n);
    }
    Ok(out)
}

/// Result of decoding one sentence.
#[derive(Clone, Debug)]
pub struct Translation<T> {
    /// Emitted ids, ending in end-of-sequence when `finished`.
    pub tokens: Vec<usize>,
    pub score: T,
    pub step_scores: Vec<T>,
    pub attention: Vec<Tensor<T>>,
    pub gates: Vec<T>,
    pub finished: bool,
}

impl<T: Scalar> Translation<T> {
    pub fn words(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.tokens,
        }
    }
}

fn final_key<T: Scalar>(h: &Hypothesis<T>, length_norm: bool) -> f64 {
    if length_norm && !h.tokens.is_empty() {
        h.score.as_f64() / h.tokens.len() as f64
    } else {
        h.score.as_f64()
    }
}

fn pick_best<T: Scalar>(hyps: &[Hypothesis<T>], length_norm: bool) -> Option<&Hypothesis<T>> {
    let finished: Vec<&Hypothesis<T>> = hyps.iter().filter(|h| h.finished).collect();
    let pool = if finished.is_empty() {
        hyps.iter().collect()
    } else {
        finished
    };
    // the beam is already in rank order, so the first maximum wins ties
    let mut best: Option<&Hypothesis<T>> = None;
    for h in pool {
        if best.is_none_or(|b| final_key(h, length_norm) > final_key(b, length_norm)) {
            best = Some(h);
        }
    }
    best
}

/// Beam search over `source` (ids, end-of-sequence included).
pub fn translate<T: Scalar>(
    source: &[usize],
    models: &Models<'_, T>,
    cfg: &BeamConfig,
) -> Result<Translation<T>> {
    if cfg.beam == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    models.check(&cfg.mode)?;
    let nmt = models.translation_model(&cfg.mode);
    let enc = nmt.encode(source)?;
    let lm_state = match cfg.mode {
        FusionMode::None => None,
        FusionMode::Shallow(_) => models.lm.map(|l| l.initial_state()),
        FusionMode::Deep => models.fused.map(|f| f.lm.initial_state()),
    };
    let mut beam = vec![Hypothesis::initial(&enc, lm_state)];
    for _ in 0..cfg.max_len_for(source.len()) {
        if beam.iter().all(|h| h.finished) {
            break;
        }
        beam = beam_step(&beam, models, cfg, &enc)?;
    }
    let best =
        pick_best(&beam, cfg.length_norm).ok_or_else(|| Error::State("empty beam".into()))?;
    Ok(Translation {
        tokens: best.tokens.clone(),
        score: best.score,
        step_scores: best.step_scores.clone(),
        attention: best.attention.clone(),
        gates: best.gates.clone(),
        finished: best.finished,
    })
}

/// Step scores of a given output sequence under `mode`, by forced decoding.
pub fn score_sequence<T: Scalar>(
    source: &[usize],
    tokens: &[usize],
    models: &Models<'_, T>,
    mode: &FusionMode,
) -> Result<Vec<T>> {
    models.check(mode)?;
    let enc = models.translation_model(mode).encode(source)?;
    let lm_state = match mode {
        FusionMode::None => None,
        FusionMode::Shallow(_) => models.lm.map(|l| l.initial_state()),
        FusionMode::Deep => models.fused.map(|f| f.lm.initial_state()),
    };
    let mut h = Hypothesis::initial(&enc, lm_state);
    let mut out = Vec::with_capacity(tokens.len());
    for &y in tokens {
        let e = expand(&h, models, mode, &enc)?;
        let s = *e.scores.data().get(y).ok_or(Error::Vocab {
            id: y,
            size: e.scores.len(),
        })?;
        out.push(s);
        h.tokens.push(y);
        h.state = e.state;
        h.lm_state = e.lm_state;
    }
    Ok(out)
}

/// Argmax decoding with the lowest id winning ties; stops after
/// end-of-sequence or `max_len` tokens.
pub fn greedy_decode<T: Scalar>(
    source: &[usize],
    models: &Models<'_, T>,
    mode: &FusionMode,
    max_len: usize,
) -> Result<Vec<usize>> {
    models.check(mode)?;
    let enc = models.translation_model(mode).encode(source)?;
    let lm_state = match mode {
        FusionMode::None => None,
        FusionMode::Shallow(_) => models.lm.map(|l| l.initial_state()),
        FusionMode::Deep => models.fused.map(|f| f.lm.initial_state()),
    };
    let mut h = Hypothesis::initial(&enc, lm_state);
    while h.tokens.len() < max_len {
        let e = expand(&h, models, mode, &enc)?;
        let y = e.scores.argmax();
        h.tokens.push(y);
        h.state = e.state;
        h.lm_state = e.lm_state;
        if y == EOS {
            break;
        }
    }
    Ok(h.tokens)
}
