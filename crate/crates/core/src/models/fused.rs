use crate::autodiff::{Tape, Var};
use crate::data::BOS;
use crate::error::{Error, Result};
use crate::layers::{DeepOutputLayer, LstmState, ParamInit};
use crate::params::{Bound, ParamId, ParameterSet};
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::{dot, Tensor};

use super::lm::{LmState, RnnLm};
use super::nmt::{AnnotationMatrix, AttentionScores, DecoderVars, EncodedVars, NmtModel};

pub const GATE_BIAS_INIT: f64 = -1.0;

/// Tape bindings of the three parameter sets of a fused model. The
/// translation model and language model are always bound as constants.
#[derive(Clone, Debug)]
pub struct FusedBound {
    pub nmt: Bound,
    pub lm: Bound,
    pub fused: Bound,
}

#[derive(Clone, Copy, Debug)]
pub struct FusedVars {
    pub decoder: DecoderVars,
    pub lm: LstmState,
    pub gate: Var,
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct FusedStep<T> {
    pub state: Tensor<T>,
    pub lm_state: LmState<T>,
    pub log_probs: Tensor<T>,
    pub scores: AttentionScores<T>,
    pub gate: T,
}

/// Translation model and language model joined by a new output layer that
/// also reads the gated language-model state `g · s_lm`, with
/// `g = σ(v_gᵀ s_lm + b_g)`. Only the new layer and the gate are trainable.
#[derive(Clone, Debug)]
pub struct FusedModel<T> {
    pub nmt: NmtModel<T>,
    pub lm: RnnLm<T>,
    pub params: ParameterSet<T>,
    output: DeepOutputLayer,
    v_g: ParamId,
    b_g: ParamId,
}

impl<T: Scalar> FusedModel<T> {
    /// Joins `nmt` and `lm`. The new layer's translation-side weights start
    /// as copies of the baseline output layer; the language-model block and
    /// `v_g` start at zero and `b_g` at −1.
    pub fn assemble(mut nmt: NmtModel<T>, mut lm: RnnLm<T>) -> Result<Self> {
        if nmt.config.tgt_vocab != lm.config.vocab {
            return Err(Error::Config(format!(
                "target vocabulary size {} differs from language-model vocabulary size {}",
                nmt.config.tgt_vocab, lm.config.vocab
            )));
        }
        if let (Some(a), Some(b)) = (&nmt.config.tgt_vocab_digest, &lm.config.vocab_digest) {
            if a != b {
                return Err(Error::Config(format!(
                    "target vocabulary digest {a} differs from language-model vocabulary digest {b}"
                )));
            }
        }
        nmt.params.set_trainable(false);
        lm.params.set_trainable(false);
        let base = nmt.output_layer().clone();
        let mut ps = ParameterSet::new();
        let mut init = ParamInit::with_std(nmt.config.seed, 0.0);
        let output = DeepOutputLayer::build(
            &mut ps,
            "fused.output",
            &base.inputs,
            Some(lm.config.hidden),
            base.width,
            base.vocab,
            &mut init,
        )?;
        for (dst, src) in output.base_params().into_iter().zip(base.base_params()) {
            ps.get_mut(dst).value = nmt.params.value(src).clone();
        }
        let v_g = ps.add("fused.controller.v_g", Tensor::zeros(&[lm.config.hidden]))?;
        let b_g = ps.add(
            "fused.controller.b_g",
            Tensor::scalar(T::of(GATE_BIAS_INIT)),
        )?;
        Ok(FusedModel {
            nmt,
            lm,
            params: ps,
            output,
            v_g,
            b_g,
        })
    }

    /// Assembly followed by adopting stored values for the trainable part.
    pub fn with_params(nmt: NmtModel<T>, lm: RnnLm<T>, params: ParameterSet<T>) -> Result<Self> {
        let mut m = Self::assemble(nmt, lm)?;
        super::adopt_params(&mut m.params, params)?;
        Ok(m)
    }

    pub fn output_layer(&self) -> &DeepOutputLayer {
        &self.output
    }

    /// `(v_g, b_g)`.
    pub fn controller(&self) -> (ParamId, ParamId) {
        (self.v_g, self.b_g)
    }

    pub fn bind(&self, tape: &Tape<T>) -> FusedBound {
        self.bind_fused(tape, self.params.bind(tape, 0))
    }

    /// Binds the frozen sets around an already bound trainable set.
    pub fn bind_fused(&self, tape: &Tape<T>, fused: Bound) -> FusedBound {
        FusedBound {
            nmt: self.nmt.params.bind_frozen(tape),
            lm: self.lm.params.bind_frozen(tape),
            fused,
        }
    }

    pub fn gate_vars(&self, tape: &Tape<T>, b: &Bound, s_lm: Var) -> Result<Var> {
        let pre = tape.dot(b[self.v_g], s_lm)?;
        let pre = tape.add(pre, b[self.b_g])?;
        Ok(tape.sigmoid(pre))
    }

    pub fn controller_gate(&self, s_lm: &Tensor<T>) -> Result<T> {
        let v = self.params.value(self.v_g);
        if v.shape() != s_lm.shape() {
            return Err(Error::dim("controller_gate", v.shape(), s_lm.shape()));
        }
        Ok(sigmoid(
            dot(v.data(), s_lm.data()) + self.params.value(self.b_g).item(),
        ))
    }

    /// Advances both recurrent states on `y_prev` and computes the fused
    /// logits.
    #[allow(clippy::too_many_arguments)]
    pub fn step_vars(
        &self,
        tape: &Tape<T>,
        b: &FusedBound,
        s_prev: Var,
        lm_prev: LstmState,
        y_prev: usize,
        enc: &EncodedVars,
        dropout: Option<Var>,
    ) -> Result<FusedVars> {
        let decoder = self.nmt.decoder_vars(tape, &b.nmt, s_prev, y_prev, enc)?;
        let lm = self.lm.advance_vars(tape, &b.lm, lm_prev, y_prev)?;
        let gate = self.gate_vars(tape, &b.fused, lm.h)?;
        let gated = tape.scale_by(lm.h, gate)?;
        let logits = self.output.forward(
            tape,
            &b.fused,
            &[decoder.state, decoder.prev_embed, decoder.attention.context],
            Some(gated),
            dropout,
        )?;
        Ok(FusedVars {
            decoder,
            lm,
            gate,
            logits,
        })
    }

    pub fn fused_step(
        &self,
        s_prev: &Tensor<T>,
        lm_prev: &LmState<T>,
        y_prev: usize,
        annotations: &AnnotationMatrix<T>,
    ) -> Result<FusedStep<T>> {
        let tape = Tape::new();
        let b = self.bind_fused(&tape, self.params.bind_frozen(&tape));
        let enc = annotations.on_tape(&tape);
        let s = tape.constant(s_prev.clone());
        let v = self.step_vars(&tape, &b, s, lm_prev.on_tape(&tape), y_prev, &enc, None)?;
        let lp = tape.log_softmax(v.logits)?;
        Ok(FusedStep {
            state: tape.value(v.decoder.state),
            lm_state: LmState {
                h: tape.value(v.lm.h),
                c: tape.value(v.lm.c),
            },
            log_probs: tape.value(lp),
            scores: AttentionScores {
                energies: tape.value(v.decoder.attention.energies),
                alpha: tape.value(v.decoder.attention.alpha),
            },
            gate: tape.scalar_value(v.gate),
        })
    }

    pub fn loss_vars(
        &self,
        tape: &Tape<T>,
        b: &FusedBound,
        source: &[usize],
        target: &[usize],
        mut dropout: impl FnMut() -> Option<Tensor<T>>,
    ) -> Result<Var> {
        if target.is_empty() {
            return Err(Error::Domain("empty target sentence".into()));
        }
        let enc = self.nmt.encode_vars(tape, &b.nmt, source)?;
        let mut s = enc.initial_state;
        let mut lm = self.lm.cell().zero_state(tape);
        let mut y_prev = BOS;
        let mut terms = Vec::with_capacity(target.len());
        for &y in target {
            let mask = dropout().map(|m| tape.constant(m));
            let v = self.step_vars(tape, b, s, lm, y_prev, &enc, mask)?;
            terms.push(tape.cross_entropy(v.logits, y)?);
            s = v.decoder.state;
            lm = v.lm;
            y_prev = y;
        }
        let all = tape.concat(&terms, 0)?;
        Ok(tape.sum(all))
    }

    /// Per-step log-probabilities of `target` under teacher forcing.
    pub fn score_steps(&self, source: &[usize], target: &[usize]) -> Result<Vec<T>> {
        let enc = self.nmt.encode(source)?;
        let mut s = enc.initial_state.clone();
        let mut lm = self.lm.initial_state();
        let mut y_prev = BOS;
        let mut out = Vec::with_capacity(target.len());
        for &y in target {
            let st = self.fused_step(&s, &lm, y_prev, &enc)?;
            out.push(st.log_probs.data().get(y).copied().ok_or(Error::Vocab {
                id: y,
                size: self.output.vocab,
            })?);
            s = st.state;
            lm = st.lm_state;
            y_prev = y;
        }
        Ok(out)
    }
}
