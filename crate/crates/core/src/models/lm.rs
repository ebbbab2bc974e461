use crate::autodiff::{Tape, Var};
use crate::data::BOS;
use crate::error::{Error, Result};
use crate::layers::{Embedding, LstmCell, LstmState, ParamInit};
use crate::params::{Bound, ParamId, ParameterSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LmConfig {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub init_std: f64,
    pub seed: u64,
    pub vocab_digest: Option<String>,
}

impl LmConfig {
    pub fn new(vocab: usize, embed: usize, hidden: usize) -> Self {
        LmConfig {
            vocab,
            embed,
            hidden,
            init_std: 0.01,
            seed: 0,
            vocab_digest: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab", self.vocab),
            ("embed", self.embed),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("lm.{name} must be positive")));
            }
        }
        if self.vocab <= BOS {
            return Err(Error::Config(
                "language-model vocabulary must hold the reserved symbols".into(),
            ));
        }
        Ok(())
    }
}

/// Hidden and cell state of the language model as values.
#[derive(Clone, Debug, PartialEq)]
pub struct LmState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Scalar> LmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        LmState {
            h: Tensor::zeros(&[hidden]),
            c: Tensor::zeros(&[hidden]),
        }
    }

    pub fn on_tape(&self, tape: &Tape<T>) -> LstmState {
        LstmState {
            h: tape.constant(self.h.clone()),
            c: tape.constant(self.c.clone()),
        }
    }
}

/// Single-layer LSTM language model over target tokens. It has no input for
/// a source sentence.
#[derive(Clone, Debug)]
pub struct RnnLm<T> {
    pub config: LmConfig,
    pub params: ParameterSet<T>,
    embed: Embedding,
    cell: LstmCell,
    out_w: ParamId,
    out_b: ParamId,
}

impl<T: Scalar> RnnLm<T> {
    pub fn new(config: LmConfig) -> Result<Self> {
        config.validate()?;
        let mut ps = ParameterSet::new();
        let mut init = ParamInit::with_std(config.seed, config.init_std);
        let embed = Embedding::build(&mut ps, "lm.embed", config.vocab, config.embed, &mut init)?;
        let cell = LstmCell::build(&mut ps, "lm.lstm", config.embed, config.hidden, &mut init)?;
        let out_w = ps.add("lm.out.W", init.gaussian(&[config.vocab, config.hidden]))?;
        let out_b = ps.add("lm.out.b", Tensor::zeros(&[config.vocab]))?;
        Ok(RnnLm {
            config,
            params: ps,
            embed,
            cell,
            out_w,
            out_b,
        })
    }

    pub fn with_params(config: LmConfig, params: ParameterSet<T>) -> Result<Self> {
        let mut m = Self::new(config)?;
        super::adopt_params(&mut m.params, params)?;
        Ok(m)
    }

    pub fn cell(&self) -> &LstmCell {
        &self.cell
    }

    /// `(W, b)` of the output projection.
    pub fn output_params(&self) -> (ParamId, ParamId) {
        (self.out_w, self.out_b)
    }

    pub fn initial_state(&self) -> LmState<T> {
        LmState::zeros(self.config.hidden)
    }

    /// Reads `y_prev` into the recurrent state.
    pub fn advance_vars(
        &self,
        tape: &Tape<T>,
        b: &Bound,
        state: LstmState,
        y_prev: usize,
    ) -> Result<LstmState> {
        let x = self.embed.lookup(tape, b, y_prev)?;
        self.cell.step(tape, b, state, x)
    }

    /// Reads `y_prev` and returns the new state and next-token logits.
    pub fn step_vars(
        &self,
        tape: &Tape<T>,
        b: &Bound,
        state: LstmState,
        y_prev: usize,
    ) -> Result<(LstmState, Var)> {
        let next = self.advance_vars(tape, b, state, y_prev)?;
        let logits = tape.matvec(b[self.out_w], next.h)?;
        let logits = tape.add(logits, b[self.out_b])?;
        Ok((next, logits))
    }

    pub fn step(&self, state: &LmState<T>, y_prev: usize) -> Result<(LmState<T>, Tensor<T>)> {
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let (next, logits) = self.step_vars(&tape, &b, state.on_tape(&tape), y_prev)?;
        let lp = tape.log_softmax(logits)?;
        Ok((
            LmState {
                h: tape.value(next.h),
                c: tape.value(next.c),
            },
            tape.value(lp),
        ))
    }

    /// Negative log-likelihood of an end-of-sequence terminated sentence.
    pub fn loss_vars(&self, tape: &Tape<T>, b: &Bound, sentence: &[usize]) -> Result<Var> {
        if sentence.is_empty() {
            return Err(Error::Domain("empty sentence".into()));
        }
        let mut state = self.cell.zero_state(tape);
        let mut y_prev = BOS;
        let mut terms = Vec::with_capacity(sentence.len());
        for &y in sentence {
            let (next, logits) = self.step_vars(tape, b, state, y_prev)?;
            terms.push(tape.cross_entropy(logits, y)?);
            state = next;
            y_prev = y;
        }
        let all = tape.concat(&terms, 0)?;
        Ok(tape.sum(all))
    }

    /// `log p(y_t | y_<t)` for every token, end-of-sequence included.
    pub fn token_log_probs(&self, sentence: &[usize]) -> Result<Vec<T>> {
        let mut state = self.initial_state();
        let mut y_prev = BOS;
        let mut out = Vec::with_capacity(sentence.len());
        for &y in sentence {
            if y >= self.config.vocab {
                return Err(Error::Vocab {
                    id: y,
                    size: self.config.vocab,
                });
            }
            let (next, lp) = self.step(&state, y_prev)?;
            out.push(lp.data()[y]);
            state = next;
            y_prev = y;
        }
        Ok(out)
    }

    /// `log p(sentence)`, summed over tokens including end-of-sequence.
    pub fn log_likelihood(&self, sentence: &[usize]) -> Result<T> {
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let l = self.loss_vars(&tape, &b, sentence)?;
        Ok(-tape.scalar_value(l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EOS;
    use crate::gradcheck::check_gradients;

    fn micro() -> RnnLm<f64> {
        let mut c = LmConfig::new(8, 3, 5);
        c.init_std = 0.5;
        c.seed = 4;
        RnnLm::new(c).unwrap()
    }

    #[test]
    fn log_probs_normalized() {
        let lm = micro();
        let (s, lp) = lm.step(&lm.initial_state(), BOS).unwrap();
        let total: f64 = lp.data().iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-10);
        let (_, lp2) = lm.step(&s, 4).unwrap();
        assert_ne!(lp, lp2);
    }

    #[test]
    fn zero_weights_uniform() {
        let mut lm = micro();
        for p in lm.params.iter_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        let (_, lp) = lm.step(&lm.initial_state(), BOS).unwrap();
        assert!(lp.data().iter().all(|&v| (v + 8f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn stepwise_matches_sentence_likelihood() {
        let lm = micro();
        let sent = [3, 5, 7, EOS];
        let mut s = lm.initial_state();
        let mut y = BOS;
        let mut total = 0.0;
        for &t in &sent {
            let (n, lp) = lm.step(&s, y).unwrap();
            total += lp.data()[t];
            s = n;
            y = t;
        }
        assert!((lm.log_likelihood(&sent).unwrap() - total).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut lm = micro();
        let sent = [3, 6, 4, 7, EOS];
        {
            let tape = Tape::new();
            let b = lm.params.bind(&tape, 0);
            let l = lm.loss_vars(&tape, &b, &sent).unwrap();
            let g = tape.backward(l).unwrap();
            lm.params.accumulate(&g, &b, 1.0);
        }
        let probe = lm.clone();
        let rep = check_gradients(&mut lm.params, 1e-5, 1e-9, |ps| {
            let tape = Tape::new();
            let b = ps.bind(&tape, 0);
            let l = probe.loss_vars(&tape, &b, &sent)?;
            Ok(tape.scalar_value(l))
        })
        .unwrap();
        assert!(rep.max_rel_err() < 1e-4, "{:?}", rep.worst());
    }
}
