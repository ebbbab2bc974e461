use crate::autodiff::{Tape, Var};
use crate::data::{SentencePair, BOS};
use crate::error::{Error, Result};
use crate::layers::{DeepOutputLayer, Embedding, GruCell, ParamInit};
use crate::params::{Bound, ParamId, ParameterSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Sizes of the attention encoder-decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct NmtConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    /// Pre-maxout width of the deep output layer; the layer emits half of it.
    pub deep_output_width: usize,
    pub init_std: f64,
    pub seed: u64,
    /// Digest of the target vocabulary the model was built on, if known.
    pub tgt_vocab_digest: Option<String>,
}

impl NmtConfig {
    pub fn new(src_vocab: usize, tgt_vocab: usize, embed: usize, hidden: usize) -> Self {
        NmtConfig {
            src_vocab,
            tgt_vocab,
            embed,
            hidden,
            deep_output_width: 2 * hidden,
            init_std: 0.01,
            seed: 0,
            tgt_vocab_digest: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
            ("embed", self.embed),
            ("hidden", self.hidden),
            ("deep_output_width", self.deep_output_width),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("nmt.{name} must be positive")));
            }
        }
        if !self.deep_output_width.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "nmt.deep_output_width must be even for 2-way maxout, got {}",
                self.deep_output_width
            )));
        }
        if self.tgt_vocab <= BOS {
            return Err(Error::Config(
                "target vocabulary must hold the reserved symbols".into(),
            ));
        }
        Ok(())
    }

    pub fn annotation_width(&self) -> usize {
        2 * self.hidden
    }
}

/// Encoder output for one source sentence. Row `j` of `rows` is
/// `[backward_j; forward_j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationMatrix<T> {
    pub rows: Tensor<T>,
    /// `rows · U_a`, reused at every decoder step.
    pub projected: Tensor<T>,
    pub initial_state: Tensor<T>,
}

impl<T: Scalar> AnnotationMatrix<T> {
    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn on_tape(&self, tape: &Tape<T>) -> EncodedVars {
        EncodedVars {
            annotations: tape.constant(self.rows.clone()),
            projected: tape.constant(self.projected.clone()),
            initial_state: tape.constant(self.initial_state.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncodedVars {
    pub annotations: Var,
    pub projected: Var,
    pub initial_state: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionScores<T> {
    pub energies: Tensor<T>,
    pub alpha: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub energies: Var,
    pub alpha: Var,
    pub context: Var,
}

/// Decoder quantities of one step, before the output layer.
#[derive(Clone, Copy, Debug)]
pub struct DecoderVars {
    pub state: Var,
    pub prev_embed: Var,
    pub attention: AttentionVars,
}

/// One decoder step evaluated outside training.
#[derive(Clone, Debug)]
pub struct NmtStep<T> {
    pub state: Tensor<T>,
    pub log_probs: Tensor<T>,
    pub scores: AttentionScores<T>,
    pub context: Tensor<T>,
}

/// Bidirectional GRU encoder, additive attention, GRU decoder and maxout
/// deep output.
#[derive(Clone, Debug)]
pub struct NmtModel<T> {
    pub config: NmtConfig,
    pub params: ParameterSet<T>,
    src_embed: Embedding,
    enc_fwd: GruCell,
    enc_bwd: GruCell,
    att_w: ParamId,
    att_u: ParamId,
    att_v: ParamId,
    att_out: ParamId,
    init_w: ParamId,
    decoder: GruCell,
    tgt_embed: Embedding,
    output: DeepOutputLayer,
}

impl<T: Scalar> NmtModel<T> {
    pub fn new(config: NmtConfig) -> Result<Self> {
        config.validate()?;
        let mut ps = ParameterSet::new();
        let mut init = ParamInit::with_std(config.seed, config.init_std);
        let (e, d) = (config.embed, config.hidden);
        let src_embed = Embedding::build(&mut ps, "nmt.src_embed", config.src_vocab, e, &mut init)?;
        let enc_fwd = GruCell::build(&mut ps, "nmt.encoder.fwd", e, d, &mut init)?;
        let enc_bwd = GruCell::build(&mut ps, "nmt.encoder.bwd", e, d, &mut init)?;
        let att_w = ps.add("nmt.attention.W_a", init.gaussian(&[d, d]))?;
        let att_u = ps.add("nmt.attention.U_a", init.gaussian(&[2 * d, d]))?;
        let att_v = ps.add("nmt.attention.V_a", init.gaussian(&[d, e]))?;
        let att_out = ps.add("nmt.attention.v_a", init.gaussian(&[d]))?;
        let init_w = ps.add("nmt.decoder.init.W", init.gaussian(&[d, d]))?;
        let decoder = GruCell::build(&mut ps, "nmt.decoder.gru", e + 2 * d, d, &mut init)?;
        let tgt_embed = Embedding::build(&mut ps, "nmt.tgt_embed", config.tgt_vocab, e, &mut init)?;
        let output = DeepOutputLayer::build(
            &mut ps,
            "nmt.output",
            &[d, e, 2 * d],
            None,
            config.deep_output_width / 2,
            config.tgt_vocab,
            &mut init,
        )?;
        Ok(NmtModel {
            config,
            params: ps,
            src_embed,
            enc_fwd,
            enc_bwd,
            att_w,
            att_u,
            att_v,
            att_out,
            init_w,
            decoder,
            tgt_embed,
            output,
        })
    }

    /// Same architecture with parameter values taken from `params`, which must
    /// hold exactly this model's ids and shapes.
    pub fn with_params(config: NmtConfig, params: ParameterSet<T>) -> Result<Self> {
        let mut m = Self::new(config)?;
        super::adopt_params(&mut m.params, params)?;
        Ok(m)
    }

    pub fn output_layer(&self) -> &DeepOutputLayer {
        &self.output
    }

    pub fn target_embedding(&self) -> &Embedding {
        &self.tgt_embed
    }

    /// `(W_a, U_a, V_a, v_a)`.
    pub fn attention_params(&self) -> [ParamId; 4] {
        [self.att_w, self.att_u, self.att_v, self.att_out]
    }

    pub fn encoder_cells(&self) -> (&GruCell, &GruCell) {
        (&self.enc_fwd, &self.enc_bwd)
    }

    pub fn init_projection(&self) -> ParamId {
        self.init_w
    }

    pub fn bind(&self, tape: &Tape<T>) -> Bound {
        self.params.bind(tape, 0)
    }

    fn check_source(&self, source: &[usize]) -> Result<()> {
        if source.is_empty() {
            return Err(Error::Domain(
                "cannot encode an empty source sentence".into(),
            ));
        }
        if let Some(&id) = source.iter().find(|&&id| id >= self.config.src_vocab) {
            return Err(Error::Vocab {
                id,
                size: self.config.src_vocab,
            });
        }
        Ok(())
    }

    pub fn encode_vars(&self, tape: &Tape<T>, b: &Bound, source: &[usize]) -> Result<EncodedVars> {
        self.check_source(source)?;
        let embs = source
            .iter()
            .map(|&x| self.src_embed.lookup(tape, b, x))
            .collect::<Result<Vec<_>>>()?;
        let zero = tape.constant(Tensor::zeros(&[self.config.hidden]));
        let mut fwd = Vec::with_capacity(embs.len());
        let mut s = zero;
        for &x in &embs {
            s = self.enc_fwd.step(tape, b, s, &[x])?;
            fwd.push(s);
        }
        let mut bwd = vec![zero; embs.len()];
        let mut s = zero;
        for (j, &x) in embs.iter().enumerate().rev() {
            s = self.enc_bwd.step(tape, b, s, &[x])?;
            bwd[j] = s;
        }
        let rows = bwd
            .iter()
            .zip(&fwd)
            .map(|(&bk, &fw)| tape.concat(&[bk, fw], 0))
            .collect::<Result<Vec<_>>>()?;
        let annotations = tape.stack_rows(&rows)?;
        let projected = tape.matmul(annotations, b[self.att_u])?;
        let init = tape.matvec(b[self.init_w], bwd[0])?;
        Ok(EncodedVars {
            annotations,
            projected,
            initial_state: tape.tanh(init),
        })
    }

    pub fn encode(&self, source: &[usize]) -> Result<AnnotationMatrix<T>> {
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let enc = self.encode_vars(&tape, &b, source)?;
        Ok(AnnotationMatrix {
            rows: tape.value(enc.annotations),
            projected: tape.value(enc.projected),
            initial_state: tape.value(enc.initial_state),
        })
    }

    /// `e_j = v_aᵀ tanh(W_a s_prev + U_a h_j + V_a y_prev)`, `α = softmax(e)`,
    /// `c = Σ α_j h_j`.
    pub fn attend_vars(
        &self,
        tape: &Tape<T>,
        b: &Bound,
        s_prev: Var,
        prev_embed: Var,
        enc: &EncodedVars,
    ) -> Result<AttentionVars> {
        let ws = tape.matvec(b[self.att_w], s_prev)?;
        let vy = tape.matvec(b[self.att_v], prev_embed)?;
        let query = tape.add(ws, vy)?;
        let hidden = tape.add_row(enc.projected, query)?;
        let hidden = tape.tanh(hidden);
        let energies = tape.matvec(hidden, b[self.att_out])?;
        let alpha = tape.softmax(energies)?;
        let context = tape.vecmat(alpha, enc.annotations)?;
        Ok(AttentionVars {
            energies,
            alpha,
            context,
        })
    }

    pub fn attend(
        &self,
        s_prev: &Tensor<T>,
        y_prev: usize,
        annotations: &AnnotationMatrix<T>,
    ) -> Result<(AttentionScores<T>, Tensor<T>)> {
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let enc = annotations.on_tape(&tape);
        let s = tape.constant(s_prev.clone());
        let y = self.tgt_embed.lookup(&tape, &b, y_prev)?;
        let att = self.attend_vars(&tape, &b, s, y, &enc)?;
        Ok((
            AttentionScores {
                energies: tape.value(att.energies),
                alpha: tape.value(att.alpha),
            },
            tape.value(att.context),
        ))
    }

    /// Attention followed by the decoder recurrence.
    pub fn decoder_vars(
        &self,
        tape: &Tape<T>,
        b: &Bound,
        s_prev: Var,
        y_prev: usize,
        enc: &EncodedVars,
    ) -> Result<DecoderVars> {
        let prev_embed = self.tgt_embed.lookup(tape, b, y_prev)?;
        let attention = self.attend_vars(tape, b, s_prev, prev_embed, enc)?;
        let state = self
            .decoder
            .step(tape, b, s_prev, &[prev_embed, attention.context])?;
        Ok(DecoderVars {
            state,
            prev_embed,
            attention,
        })
    }

    /// Vocabulary logits of one step; `dropout` masks the maxout layer.
    pub fn logits_vars(
        &self,
        tape: &Tape<T>,
        b: &Bound,
        dec: &DecoderVars,
        dropout: Option<Var>,
    ) -> Result<Var> {
        self.output.forward(
            tape,
            b,
            &[dec.state, dec.prev_embed, dec.attention.context],
            None,
            dropout,
        )
    }

    pub fn decode_step(
        &self,
        s_prev: &Tensor<T>,
        y_prev: usize,
        annotations: &AnnotationMatrix<T>,
    ) -> Result<NmtStep<T>> {
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let enc = annotations.on_tape(&tape);
        let s = tape.constant(s_prev.clone());
        let dec = self.decoder_vars(&tape, &b, s, y_prev, &enc)?;
        let logits = self.logits_vars(&tape, &b, &dec, None)?;
        let log_probs = tape.log_softmax(logits)?;
        Ok(NmtStep {
            state: tape.value(dec.state),
            log_probs: tape.value(log_probs),
            scores: AttentionScores {
                energies: tape.value(dec.attention.energies),
                alpha: tape.value(dec.attention.alpha),
            },
            context: tape.value(dec.attention.context),
        })
    }

    /// Teacher-forced negative log-likelihood of `target` given `source` as a
    /// scalar node. `dropout` supplies one mask per target position.
    pub fn loss_vars(
        &self,
        tape: &Tape<T>,
        b: &Bound,
        source: &[usize],
        target: &[usize],
        mut dropout: impl FnMut() -> Option<Tensor<T>>,
    ) -> Result<Var> {
        if target.is_empty() {
            return Err(Error::Domain("empty target sentence".into()));
        }
        let enc = self.encode_vars(tape, b, source)?;
        let mut s = enc.initial_state;
        let mut y_prev = BOS;
        let mut terms = Vec::with_capacity(target.len());
        for &y in target {
            let dec = self.decoder_vars(tape, b, s, y_prev, &enc)?;
            let mask = dropout().map(|m| tape.constant(m));
            let logits = self.logits_vars(tape, b, &dec, mask)?;
            terms.push(tape.cross_entropy(logits, y)?);
            s = dec.state;
            y_prev = y;
        }
        let all = tape.concat(&terms, 0)?;
        Ok(tape.sum(all))
    }

    /// `−log p(target | source)` with regularization off.
    pub fn nmt_loss(&self, pair: &SentencePair) -> Result<T> {
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let l = self.loss_vars(&tape, &b, &pair.source, &pair.target, || None)?;
        Ok(tape.scalar_value(l))
    }

    /// Per-step log-probabilities of `target` under teacher forcing.
    pub fn score_steps(&self, source: &[usize], target: &[usize]) -> Result<Vec<T>> {
        let enc = self.encode(source)?;
        let mut s = enc.initial_state.clone();
        let mut y_prev = BOS;
        let mut out = Vec::with_capacity(target.len());
        for &y in target {
            let step = self.decode_step(&s, y_prev, &enc)?;
            let lp = step.log_probs.data().get(y).copied().ok_or(Error::Vocab {
                id: y,
                size: self.config.tgt_vocab,
            })?;
            out.push(lp);
            s = step.state;
            y_prev = y;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EOS;
    use crate::gradcheck::check_gradients;

    fn micro(seed: u64) -> NmtModel<f64> {
        let mut c = NmtConfig::new(7, 6, 3, 4);
        c.init_std = 0.5;
        c.seed = seed;
        NmtModel::new(c).unwrap()
    }

    fn zero_where(m: &mut NmtModel<f64>, pred: impl Fn(&str) -> bool) {
        for p in m.params.iter_mut() {
            if pred(&p.id) {
                p.value = Tensor::zeros(p.value.shape());
            }
        }
    }

    #[test]
    fn annotation_shape_and_bounds() {
        let m = micro(1);
        let a = m.encode(&[4]).unwrap();
        assert_eq!(a.rows.shape(), &[1, 8]);
        let a = m.encode(&[3, 4, 5, EOS]).unwrap();
        assert_eq!(a.rows.shape(), &[4, 8]);
        assert!(a.rows.data().iter().all(|v| v.abs() < 1.0));
        assert!(matches!(m.encode(&[]), Err(Error::Domain(_))));
        assert!(matches!(
            m.encode(&[7]),
            Err(Error::Vocab { id: 7, size: 7 })
        ));
    }

    #[test]
    fn zero_weights_give_zero_annotations() {
        let mut m = micro(2);
        zero_where(&mut m, |_| true);
        let a = m.encode(&[3, 4, 5]).unwrap();
        assert!(a.rows.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn palindrome_mirror_symmetry() {
        let mut m = micro(3);
        let fwd: Vec<_> = m
            .params
            .iter()
            .filter(|p| p.id.starts_with("nmt.encoder.fwd."))
            .cloned()
            .collect();
        for p in fwd {
            let twin = p.id.replace(".fwd.", ".bwd.");
            let id = m.params.index_of(&twin).unwrap();
            m.params.get_mut(id).value = p.value.clone();
        }
        let src = [3, 5, 6, 5, 3];
        let a = m.encode(&src).unwrap();
        let t = src.len();
        for j in 0..t {
            let (row, mirror) = (a.rows.row(j), a.rows.row(t - 1 - j));
            assert_eq!(&row[..4], &mirror[4..]);
            assert_eq!(&row[4..], &mirror[..4]);
        }
    }

    #[test]
    fn single_position_attention_is_total() {
        let m = micro(4);
        let a = m.encode(&[5]).unwrap();
        let (sc, c) = m.attend(&a.initial_state, BOS, &a).unwrap();
        assert_eq!(sc.alpha.data(), &[1.0]);
        assert_eq!(c.data(), a.rows.row(0));
    }

    #[test]
    fn zero_alignment_gives_uniform_attention() {
        let mut m = micro(5);
        zero_where(&mut m, |id| id.starts_with("nmt.attention."));
        let a = m.encode(&[3, 4, 5, EOS]).unwrap();
        let (sc, c) = m.attend(&a.initial_state, BOS, &a).unwrap();
        for &w in sc.alpha.data() {
            assert!((w - 0.25).abs() < 1e-15);
        }
        for k in 0..8 {
            let mean: f64 = (0..4).map(|j| a.rows.row(j)[k]).sum::<f64>() / 4.0;
            assert!((c.data()[k] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_set_energies() {
        let mut m = micro(6);
        zero_where(&mut m, |id| id.starts_with("nmt.attention."));
        let a = m.encode(&[3, 4, 5]).unwrap();
        let target = [1.0f64, 2.0, 3.0];
        let scale = 4.0;
        let mut rows = a.clone();
        let mut proj = vec![0.0; 3 * 4];
        for j in 0..3 {
            proj[j * 4] = (target[j] / scale).atanh();
        }
        rows.projected = Tensor::matrix(3, 4, proj).unwrap();
        let id = m.attention_params()[3];
        m.params.get_mut(id).value = Tensor::vector(vec![scale, 0.0, 0.0, 0.0]);
        let (sc, _) = m.attend(&a.initial_state, BOS, &rows).unwrap();
        let z: f64 = target.iter().map(|v| v.exp()).sum();
        for (j, t) in target.iter().enumerate() {
            assert!((sc.energies.data()[j] - t).abs() < 1e-12);
            assert!((sc.alpha.data()[j] - t.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn step_log_probs_normalized() {
        let m = micro(7);
        let a = m.encode(&[3, 4, EOS]).unwrap();
        let st = m.decode_step(&a.initial_state, BOS, &a).unwrap();
        let total: f64 = st.log_probs.data().iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-10);
        let sum_alpha: f64 = st.scores.alpha.data().iter().sum();
        assert!((sum_alpha - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_output_weights_uniform() {
        let mut m = micro(8);
        zero_where(&mut m, |id| id.starts_with("nmt.output."));
        let a = m.encode(&[3, EOS]).unwrap();
        let st = m.decode_step(&a.initial_state, BOS, &a).unwrap();
        for &lp in st.log_probs.data() {
            assert!((lp + 6f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_two_word_loss() {
        let mut c = NmtConfig::new(4, 3, 2, 2);
        c.seed = 1;
        let mut m = NmtModel::<f64>::new(c).unwrap();
        zero_where(&mut m, |id| id.starts_with("nmt.output."));
        let pair = SentencePair::new(vec![3, EOS], vec![0, 0, EOS]).unwrap();
        assert!((m.nmt_loss(&pair).unwrap() - 3.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn teacher_forcing_matches_stepwise() {
        let m = micro(9);
        let pair = SentencePair::new(vec![3, 4, 6, EOS], vec![4, 5, EOS]).unwrap();
        let steps = m.score_steps(&pair.source, &pair.target).unwrap();
        let total: f64 = steps.iter().sum();
        assert!((m.nmt_loss(&pair).unwrap() + total).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut m = micro(10);
        let pair = SentencePair::new(vec![3, 4, EOS], vec![5, 3, EOS]).unwrap();
        {
            let tape = Tape::new();
            let b = m.bind(&tape);
            let l = m
                .loss_vars(&tape, &b, &pair.source, &pair.target, || None)
                .unwrap();
            let g = tape.backward(l).unwrap();
            m.params.accumulate(&g, &b, 1.0);
        }
        let probe = m.clone();
        let rep = check_gradients(&mut m.params, 1e-5, 1e-9, |ps| {
            let tape = Tape::new();
            let b = ps.bind(&tape, 0);
            let l = probe.loss_vars(&tape, &b, &pair.source, &pair.target, || None)?;
            Ok(tape.scalar_value(l))
        })
        .unwrap();
        assert!(rep.max_rel_err() < 1e-4, "{:?}", rep.worst());
        assert_eq!(rep.params.len(), m.params.len());
    }
}
