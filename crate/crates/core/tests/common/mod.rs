#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use fusion_nmt::autodiff::Tape;
use fusion_nmt::data::toy::{make_toy_corpus, NounClasses, ToyKind, ToySizes};
use fusion_nmt::data::{SentencePair, Tokenizer, Vocabulary, EOS, UNK};
use fusion_nmt::decoding::{detokenize_all, translate_corpus, BeamConfig, FusionMode, Models};
use fusion_nmt::gradcheck::{check_gradients, GradCheckReport};
use fusion_nmt::models::{FusedBound, FusedModel, LmConfig, NmtConfig, NmtModel, RnnLm};
use fusion_nmt::params::ParameterSet;
use fusion_nmt::tensor::Tensor;
use fusion_nmt::training::{
    finetune_deep_fusion, train_lm, train_nmt, DevSet, FinetuneConfig, Hooks, OptimizerKind,
    TrainConfig, Trained,
};
use fusion_nmt::Translation64;

pub fn nmt(src: usize, tgt: usize, embed: usize, hidden: usize, seed: u64) -> NmtModel<f64> {
    let mut c = NmtConfig::new(src, tgt, embed, hidden);
    c.init_std = 0.5;
    c.seed = seed;
    NmtModel::new(c).unwrap()
}

pub fn lm(vocab: usize, embed: usize, hidden: usize, seed: u64) -> RnnLm<f64> {
    let mut c = LmConfig::new(vocab, embed, hidden);
    c.init_std = 0.5;
    c.seed = seed;
    RnnLm::new(c).unwrap()
}

/// Replaces every value of `ps` with N(0, std²) draws.
pub fn randomize(ps: &mut ParameterSet<f64>, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, std).unwrap();
    for p in ps.iter_mut() {
        for v in p.value.data_mut() {
            *v = n.sample(&mut rng);
        }
    }
}

/// A fused model whose new layer and gate hold random values.
pub fn fused(src: usize, tgt: usize, seed: u64) -> FusedModel<f64> {
    let mut fm = FusedModel::assemble(nmt(src, tgt, 3, 5, seed), lm(tgt, 3, 4, seed + 50)).unwrap();
    randomize(&mut fm.params, 0.5, seed + 99);
    fm
}

pub fn ids(v: &[usize]) -> Vec<usize> {
    let mut out = v.to_vec();
    out.push(EOS);
    out
}

pub fn nmt_gradcheck(m: &NmtModel<f64>, src: &[usize], tgt: &[usize]) -> GradCheckReport {
    let mut m = m.clone();
    m.params.zero_grads();
    let tape = Tape::new();
    let b = m.bind(&tape);
    let l = m.loss_vars(&tape, &b, src, tgt, || None).unwrap();
    let g = tape.backward(l).unwrap();
    m.params.accumulate(&g, &b, 1.0);
    let probe = m.clone();
    check_gradients(&mut m.params, 1e-5, 1e-9, |ps| {
        let tape = Tape::new();
        let b = ps.bind(&tape, 0);
        let l = probe.loss_vars(&tape, &b, src, tgt, || None)?;
        Ok(tape.scalar_value(l))
    })
    .unwrap()
}

pub fn lm_gradcheck(m: &RnnLm<f64>, sentence: &[usize]) -> GradCheckReport {
    let mut m = m.clone();
    m.params.zero_grads();
    let tape = Tape::new();
    let b = m.params.bind(&tape, 0);
    let l = m.loss_vars(&tape, &b, sentence).unwrap();
    let g = tape.backward(l).unwrap();
    m.params.accumulate(&g, &b, 1.0);
    let probe = m.clone();
    check_gradients(&mut m.params, 1e-5, 1e-9, |ps| {
        let tape = Tape::new();
        let b = ps.bind(&tape, 0);
        let l = probe.loss_vars(&tape, &b, sentence)?;
        Ok(tape.scalar_value(l))
    })
    .unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusedPart {
    Translation,
    Language,
    Output,
}

/// Finite-difference check of the fused loss with respect to one of its
/// three parameter sets, the other two held constant.
pub fn fused_gradcheck(
    fm: &FusedModel<f64>,
    part: FusedPart,
    src: &[usize],
    tgt: &[usize],
) -> GradCheckReport {
    let mut fm = fm.clone();
    fm.nmt.params.set_trainable(part == FusedPart::Translation);
    fm.lm.params.set_trainable(part == FusedPart::Language);
    let bind = |fm: &FusedModel<f64>, tape: &Tape<f64>, ps: &ParameterSet<f64>| -> FusedBound {
        match part {
            FusedPart::Translation => FusedBound {
                nmt: ps.bind(tape, 0),
                lm: fm.lm.params.bind_frozen(tape),
                fused: fm.params.bind_frozen(tape),
            },
            FusedPart::Language => FusedBound {
                nmt: fm.nmt.params.bind_frozen(tape),
                lm: ps.bind(tape, 0),
                fused: fm.params.bind_frozen(tape),
            },
            FusedPart::Output => fm.bind_fused(tape, ps.bind(tape, 0)),
        }
    };
    let mut ps = match part {
        FusedPart::Translation => fm.nmt.params.clone(),
        FusedPart::Language => fm.lm.params.clone(),
        FusedPart::Output => fm.params.clone(),
    };
    ps.zero_grads();
    let tape = Tape::new();
    let b = bind(&fm, &tape, &ps);
    let l = fm.loss_vars(&tape, &b, src, tgt, || None).unwrap();
    let g = tape.backward(l).unwrap();
    let which = match part {
        FusedPart::Translation => &b.nmt,
        FusedPart::Language => &b.lm,
        FusedPart::Output => &b.fused,
    };
    ps.accumulate(&g, which, 1.0);
    check_gradients(&mut ps, 1e-5, 1e-9, |ps| {
        let tape = Tape::new();
        let b = bind(&fm, &tape, ps);
        let l = fm.loss_vars(&tape, &b, src, tgt, || None)?;
        Ok(tape.scalar_value(l))
    })
    .unwrap()
}

/// Reference step scores computed without the decoder: teacher-forced
/// model probabilities, with shallow fusion's language-model term
/// renormalized here from the raw distribution.
pub fn reference_scores(
    nmt: &NmtModel<f64>,
    lm: &RnnLm<f64>,
    fm: &FusedModel<f64>,
    mode: &FusionMode,
    src: &[usize],
    tgt: &[usize],
) -> Vec<f64> {
    match mode {
        FusionMode::None => nmt.score_steps(src, tgt).unwrap(),
        FusionMode::Deep => fm.score_steps(src, tgt).unwrap(),
        FusionMode::Shallow(cfg) => {
            let tm = nmt.score_steps(src, tgt).unwrap();
            let mut state = lm.initial_state();
            let mut prev = fusion_nmt::data::BOS;
            let mut out = Vec::new();
            for (t, &y) in tgt.iter().enumerate() {
                let (next, lp) = lm.step(&state, prev).unwrap();
                if y == EOS || y == UNK {
                    out.push(tm[t]);
                } else {
                    let z: f64 = lp
                        .data()
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| *k != EOS && *k != UNK)
                        .map(|(_, v)| v.exp())
                        .sum();
                    out.push(tm[t] + cfg.beta * (lp.data()[y] - z.ln()));
                }
                state = next;
                prev = y;
            }
            out
        }
    }
}

/// Every end-of-sequence terminated sequence over `vocab` ids of total
/// length at most `max_len`.
pub fn all_sequences(vocab: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for p in &frontier {
            let mut done = p.clone();
            done.push(EOS);
            out.push(done);
            for k in (0..vocab).filter(|&k| k != EOS) {
                let mut q = p.clone();
                q.push(k);
                next.push(q);
            }
        }
        frontier = next;
    }
    out
}

/// Highest-scoring sequence by enumeration, with its total score.
pub fn exhaustive_best(
    nmt: &NmtModel<f64>,
    lm: &RnnLm<f64>,
    fm: &FusedModel<f64>,
    mode: &FusionMode,
    src: &[usize],
    vocab: usize,
    max_len: usize,
) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for seq in all_sequences(vocab, max_len) {
        let s: f64 = reference_scores(nmt, lm, fm, mode, src, &seq).iter().sum();
        if best.as_ref().is_none_or(|b| s > b.1) {
            best = Some((seq, s));
        }
    }
    best.unwrap()
}

/// Fraction of article positions in `outputs` that break the noun-class
/// rule of the constrained-target language, and the number checked.
pub fn constraint_violations(grammar: &NounClasses, outputs: &[Vec<String>]) -> (usize, usize) {
    let (mut bad, mut total) = (0, 0);
    for s in outputs {
        let mut prev = None;
        for (i, t) in s.iter().enumerate() {
            if i % 2 == 0 {
                total += 1;
                if *t != grammar.article_after(prev) {
                    bad += 1;
                }
            } else {
                prev = t.strip_prefix('y').and_then(|k| k.parse::<usize>().ok());
            }
        }
    }
    (bad, total)
}

pub fn uniform_lm(vocab: usize) -> RnnLm<f64> {
    let mut m = RnnLm::new(LmConfig::new(vocab, 3, 4)).unwrap();
    for p in m.params.iter_mut() {
        p.value = Tensor::zeros(p.value.shape());
    }
    m
}

/// A tokenized, encoded toy corpus.
pub struct Toy {
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub train: Vec<SentencePair>,
    pub dev: DevSet,
    pub test_sources: Vec<Vec<usize>>,
    pub test_refs: Vec<Vec<String>>,
    pub mono: Vec<Vec<usize>>,
    pub mono_dev: Vec<Vec<usize>>,
    pub grammar: Option<NounClasses>,
}

impl Toy {
    pub fn new(kind: ToyKind, sizes: &ToySizes, seed: u64) -> Toy {
        let c = make_toy_corpus(kind, sizes, seed).unwrap();
        let tok = Tokenizer::default();
        let split = |pairs: &[(String, String)]| -> Vec<(Vec<String>, Vec<String>)> {
            pairs
                .iter()
                .map(|(s, t)| (tok.tokenize(s), tok.tokenize(t)))
                .collect()
        };
        let (train, dev, test) = (split(&c.train), split(&c.dev), split(&c.test));
        let mono: Vec<Vec<String>> = c.mono.iter().map(|s| tok.tokenize(s)).collect();
        let mono_dev: Vec<Vec<String>> = c.mono_dev.iter().map(|s| tok.tokenize(s)).collect();
        let src_vocab = Vocabulary::build(train.iter().map(|p| p.0.as_slice()), 1000).unwrap();
        let tgt_vocab = if mono.is_empty() {
            Vocabulary::build(train.iter().map(|p| p.1.as_slice()), 1000).unwrap()
        } else {
            Vocabulary::build(mono.iter().map(Vec::as_slice), 1000).unwrap()
        };
        let encode = |p: &[(Vec<String>, Vec<String>)]| -> Vec<SentencePair> {
            p.iter()
                .map(|(s, t)| SentencePair::encode(&src_vocab, &tgt_vocab, s, t).unwrap())
                .collect()
        };
        let train = encode(&train);
        let dev = DevSet {
            sources: dev
                .iter()
                .map(|p| src_vocab.encode_sentence(&p.0))
                .collect(),
            references: dev.iter().map(|p| p.1.clone()).collect(),
            vocab: tgt_vocab.clone(),
        };
        Toy {
            test_sources: test
                .iter()
                .map(|p| src_vocab.encode_sentence(&p.0))
                .collect(),
            test_refs: test.iter().map(|p| p.1.clone()).collect(),
            mono: mono.iter().map(|s| tgt_vocab.encode_sentence(s)).collect(),
            mono_dev: mono_dev
                .iter()
                .map(|s| tgt_vocab.encode_sentence(s))
                .collect(),
            grammar: c.grammar,
            src_vocab,
            tgt_vocab,
            train,
            dev,
        }
    }

    pub fn decode(
        &self,
        models: &Models<'_, f64>,
        beam: usize,
        mode: FusionMode,
    ) -> (Vec<Translation64>, Vec<Vec<String>>) {
        let out = translate_corpus(
            &self.test_sources,
            models,
            &BeamConfig::new(beam, mode).unwrap(),
        )
        .unwrap();
        let hyps = detokenize_all(&out, &self.tgt_vocab).unwrap();
        (out, hyps)
    }
}

pub fn toy_train_config(seed: u64, updates: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        optimizer: OptimizerKind::adam(0.005),
        dropout: 0.0,
        weight_noise: 0.0,
        max_updates: updates,
        eval_interval: 100,
        patience: 100,
        dev_beam: 1,
        seed,
        ..TrainConfig::default()
    }
}

/// Baseline, language model and deep-fusion model trained on one toy corpus.
pub struct Pipeline {
    pub nmt: Trained<NmtModel<f64>, f64>,
    pub lm: Trained<RnnLm<f64>, f64>,
    pub fresh: FusedModel<f64>,
    pub fused: Trained<FusedModel<f64>, f64>,
}

pub struct PipelineSizes {
    pub embed: usize,
    pub hidden: usize,
    pub nmt_updates: usize,
    pub lm_updates: usize,
    pub ft_updates: usize,
}

pub fn run_pipeline(toy: &Toy, sizes: &PipelineSizes, seed: u64) -> Pipeline {
    let mut nc = NmtConfig::new(
        toy.src_vocab.len(),
        toy.tgt_vocab.len(),
        sizes.embed,
        sizes.hidden,
    );
    nc.init_std = 0.1;
    nc.seed = seed;
    nc.tgt_vocab_digest = Some(toy.tgt_vocab.digest());
    let base = toy_train_config(seed, sizes.nmt_updates);
    let nmt = train_nmt(
        &NmtModel::new(nc).unwrap(),
        &toy.train,
        &toy.dev,
        &base,
        Hooks::default(),
    )
    .unwrap();
    let mut lc = LmConfig::new(toy.tgt_vocab.len(), sizes.embed, sizes.hidden);
    lc.init_std = 0.1;
    lc.seed = seed;
    lc.vocab_digest = Some(toy.tgt_vocab.digest());
    let lm_cfg = TrainConfig {
        max_updates: sizes.lm_updates,
        eval_interval: 200,
        ..base.clone()
    };
    let lm = train_lm(
        &RnnLm::new(lc).unwrap(),
        &toy.mono,
        &toy.mono_dev,
        &lm_cfg,
        Hooks::default(),
    )
    .unwrap();
    let fresh = FusedModel::assemble(nmt.model.clone(), lm.model.clone()).unwrap();
    let ft = FinetuneConfig {
        train: TrainConfig {
            max_updates: sizes.ft_updates,
            ..base
        },
        ..FinetuneConfig::default()
    };
    let fused = finetune_deep_fusion(&fresh, &toy.train, &toy.dev, &ft, Hooks::default()).unwrap();
    Pipeline {
        nmt,
        lm,
        fresh,
        fused,
    }
}
