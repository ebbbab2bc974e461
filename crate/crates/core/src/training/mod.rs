//! Minibatch training: optimizers, gradient clipping, regularization,
//! early stopping and the deep-fusion finetuning schedule.

mod clip;
mod config;
mod early;
mod optim;
mod trainer;

pub use clip::clip_gradients;
pub use config::{FinetuneConfig, TrainConfig};
pub use early::EarlyStopState;
pub use optim::{Optimizer, OptimizerKind};
pub use trainer::{Hooks, ResumeState, TrainReport};

use crate::autodiff::Tape;
use crate::data::{SentencePair, Vocabulary};
use crate::decoding::{detokenize_all, translate_corpus, BeamConfig, FusionMode, Models};
use crate::error::{Error, Result};
use crate::eval::{bleu, perplexity};
use crate::models::{FusedModel, NmtModel, RnnLm};
use crate::params::{Bound, ParameterSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use trainer::{run, Objective};

/// Held-out data scored during training.
#[derive(Clone, Debug)]
pub struct DevSet {
    pub sources: Vec<Vec<usize>>,
    pub references: Vec<Vec<String>>,
    /// Target vocabulary used to turn hypotheses back into tokens.
    pub vocab: Vocabulary,
}

impl DevSet {
    pub fn from_pairs(pairs: &[SentencePair], vocab: &Vocabulary) -> Result<Self> {
        let references = pairs
            .iter()
            .map(|p| vocab.decode(&p.target[..p.target.len() - 1]))
            .collect::<Result<_>>()?;
        Ok(DevSet {
            sources: pairs.iter().map(|p| p.source.clone()).collect(),
            references,
            vocab: vocab.clone(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Trained<M, T> {
    /// Model holding the best parameters seen at an evaluation.
    pub model: M,
    pub report: TrainReport,
    pub last: ResumeState<T>,
}

fn dev_bleu<T: Scalar>(models: &Models<'_, T>, dev: &DevSet, cfg: &BeamConfig) -> Result<f64> {
    let out = translate_corpus(&dev.sources, models, cfg)?;
    let hyps = detokenize_all(&out, &dev.vocab)?;
    Ok(bleu(&hyps, &dev.references)?.score)
}

/// Trains the attention model on `train`, early-stopping on dev BLEU.
pub fn train_nmt<T: Scalar>(
    model: &NmtModel<T>,
    train: &[SentencePair],
    dev: &DevSet,
    cfg: &TrainConfig,
    hooks: Hooks<'_, T>,
) -> Result<Trained<NmtModel<T>, T>> {
    let beam = BeamConfig::new(cfg.dev_beam, FusionMode::None)?;
    let noise = cfg.noise()?;
    let noise_at = |_: usize| Ok(noise);
    let loss =
        |tape: &Tape<T>, b: &Bound, i: usize, drop: &mut dyn FnMut() -> Option<Tensor<T>>| {
            model.loss_vars(tape, b, &train[i].source, &train[i].target, drop)
        };
    let mut evaluate = |ps: &ParameterSet<T>| {
        let mut m = model.clone();
        m.params = ps.clone();
        dev_bleu(&Models::new(&m), dev, &beam)
    };
    let obj = Objective {
        examples: train.len(),
        higher_is_better: true,
        dropout_width: model.output_layer().width,
        noise_at: &noise_at,
        loss: &loss,
        evaluate: &mut evaluate,
    };
    let (best, report, last) = run(&model.params, cfg, obj, hooks)?;
    let mut m = model.clone();
    m.params = best;
    Ok(Trained {
        model: m,
        report,
        last,
    })
}

/// Trains the language model on end-of-sequence terminated id sequences,
/// early-stopping on dev perplexity.
pub fn train_lm<T: Scalar>(
    lm: &RnnLm<T>,
    mono: &[Vec<usize>],
    dev: &[Vec<usize>],
    cfg: &TrainConfig,
    hooks: Hooks<'_, T>,
) -> Result<Trained<RnnLm<T>, T>> {
    if mono.iter().any(|s| s.is_empty()) {
        return Err(Error::Data(
            "empty sentence in the language-model corpus".into(),
        ));
    }
    let noise = cfg.noise()?;
    let noise_at = |_: usize| Ok(noise);
    let loss =
        |tape: &Tape<T>, b: &Bound, i: usize, _drop: &mut dyn FnMut() -> Option<Tensor<T>>| {
            lm.loss_vars(tape, b, &mono[i])
        };
    let mut evaluate = |ps: &ParameterSet<T>| {
        let mut m = lm.clone();
        m.params = ps.clone();
        Ok(perplexity(&m, dev)?.perplexity)
    };
    let obj = Objective {
        examples: mono.len(),
        higher_is_better: false,
        dropout_width: 0,
        noise_at: &noise_at,
        loss: &loss,
        evaluate: &mut evaluate,
    };
    let (best, report, last) = run(&lm.params, cfg, obj, hooks)?;
    let mut m = lm.clone();
    m.params = best;
    Ok(Trained {
        model: m,
        report,
        last,
    })
}

/// Trains only the fused output layer and the controller of `fm`; the
/// translation model and language model are left bit-identical.
pub fn finetune_deep_fusion<T: Scalar>(
    fm: &FusedModel<T>,
    train: &[SentencePair],
    dev: &DevSet,
    cfg: &FinetuneConfig,
    hooks: Hooks<'_, T>,
) -> Result<Trained<FusedModel<T>, T>> {
    cfg.validate()?;
    let nmt_digest = fm.nmt.params.digest();
    let lm_digest = fm.lm.params.digest();
    let beam = BeamConfig::new(cfg.train.dev_beam, FusionMode::Deep)?;
    let noise_at = |u: usize| cfg.noise_at(u);
    let loss =
        |tape: &Tape<T>, b: &Bound, i: usize, drop: &mut dyn FnMut() -> Option<Tensor<T>>| {
            let fb = fm.bind_fused(tape, b.clone());
            fm.loss_vars(tape, &fb, &train[i].source, &train[i].target, drop)
        };
    let mut evaluate = |ps: &ParameterSet<T>| {
        let mut m = fm.clone();
        m.params = ps.clone();
        dev_bleu(&Models::new(&m.nmt).with_fused(&m), dev, &beam)
    };
    let obj = Objective {
        examples: train.len(),
        higher_is_better: true,
        dropout_width: fm.output_layer().width,
        noise_at: &noise_at,
        loss: &loss,
        evaluate: &mut evaluate,
    };
    let (best, report, last) = run(&fm.params, &cfg.train, obj, hooks)?;
    let mut m = fm.clone();
    m.params = best;
    if m.nmt.params.digest() != nmt_digest || m.lm.params.digest() != lm_digest {
        return Err(Error::State(
            "a frozen model changed during finetuning".into(),
        ));
    }
    Ok(Trained {
        model: m,
        report,
        last,
    })
}
