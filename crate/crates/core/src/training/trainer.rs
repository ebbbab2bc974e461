use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::data::BatchIterator;
use crate::error::{Error, Result};
use crate::layers::{dropout_mask, is_recurrent, perturb, NoiseConfig};
use crate::params::{Bound, ParameterSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{clip_gradients, EarlyStopState, Optimizer, TrainConfig};

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct ResumeState<T> {
    pub update: usize,
    pub params: ParameterSet<T>,
    pub best: ParameterSet<T>,
    pub optimizer: Optimizer<T>,
    pub early: EarlyStopState,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub updates: usize,
    /// Mean per-sentence loss of each update.
    pub losses: Vec<f64>,
    /// Global gradient norm before clipping.
    pub grad_norms: Vec<f64>,
    /// Global gradient norm after clipping.
    pub clipped_norms: Vec<f64>,
    pub evaluations: Vec<(usize, f64)>,
    pub best_metric: Option<f64>,
    pub best_update: usize,
    pub stopped_early: bool,
}

pub type EvalHook<'a, T> = dyn FnMut(&ResumeState<T>) -> Result<()> + 'a;

/// Optional side channels of a training run.
pub struct Hooks<'a, T> {
    /// Receives the tab-separated log.
    pub log: Option<&'a mut dyn Write>,
    /// Called after every evaluation with the full resumable state.
    pub on_eval: Option<&'a mut EvalHook<'a, T>>,
    pub resume: Option<ResumeState<T>>,
}

impl<T> Default for Hooks<'_, T> {
    fn default() -> Self {
        Hooks {
            log: None,
            on_eval: None,
            resume: None,
        }
    }
}

pub(crate) type LossFn<'a, T> =
    dyn Fn(&Tape<T>, &Bound, usize, &mut dyn FnMut() -> Option<Tensor<T>>) -> Result<Var> + 'a;

pub(crate) struct Objective<'a, T> {
    pub examples: usize,
    pub higher_is_better: bool,
    pub dropout_width: usize,
    pub noise_at: &'a dyn Fn(usize) -> Result<NoiseConfig>,
    pub loss: &'a LossFn<'a, T>,
    pub evaluate: &'a mut dyn FnMut(&ParameterSet<T>) -> Result<f64>,
}

fn noisy_values<T: Scalar>(
    ps: &ParameterSet<T>,
    noise: &NoiseConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Tensor<T>> {
    ps.iter_insertion()
        .map(|p| {
            if p.trainable && !is_recurrent(&p.id) {
                perturb(noise, &p.value, rng)
            } else {
                p.value.clone()
            }
        })
        .collect()
}

/// Mean loss of a batch; gradients scaled by `1/len` are added to `params`.
pub(crate) fn batch_step<T: Scalar>(
    params: &mut ParameterSet<T>,
    indices: &[usize],
    noise: &NoiseConfig,
    rng: &mut ChaCha8Rng,
    obj: &Objective<'_, T>,
) -> Result<f64> {
    let values = noisy_values(params, noise, rng);
    params.zero_grads();
    let w = T::of(1.0 / indices.len() as f64);
    let mut total = 0.0;
    for &i in indices {
        let tape = Tape::new();
        let b = params.bind_values(&tape, 0, &values);
        let mut drop = || dropout_mask(noise, obj.dropout_width, &mut *rng);
        let loss = (obj.loss)(&tape, &b, i, &mut drop)?;
        let lv = tape.scalar_value(loss).as_f64();
        if !lv.is_finite() {
            return Err(Error::Numeric(format!(
                "loss diverged on example {i}: {lv}"
            )));
        }
        total += lv;
        let g = tape.backward(loss)?;
        params.accumulate(&g, &b, w);
    }
    Ok(total / indices.len() as f64)
}

pub(crate) fn run<T: Scalar>(
    init: &ParameterSet<T>,
    cfg: &TrainConfig,
    obj: Objective<'_, T>,
    hooks: Hooks<'_, T>,
) -> Result<(ParameterSet<T>, TrainReport, ResumeState<T>)> {
    cfg.validate()?;
    if obj.examples == 0 {
        return Err(Error::Data("no training examples".into()));
    }
    let Hooks {
        mut log,
        mut on_eval,
        resume,
    } = hooks;
    let mut state = match resume {
        Some(s) => s,
        None => {
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "update\tloss\tgrad_norm\tdev_metric")?;
            }
            ResumeState {
                update: 0,
                params: init.clone(),
                best: init.clone(),
                optimizer: Optimizer::new(cfg.optimizer, init).with_update_scale(cfg.update_scale),
                early: EarlyStopState::new(obj.higher_is_better, cfg.patience),
            }
        }
    };
    let mut batches = BatchIterator::new(obj.examples, cfg.batch_size, cfg.seed);
    batches.seek(state.update);
    let mut report = TrainReport {
        best_metric: state.early.best,
        best_update: state.early.best_update,
        ..TrainReport::default()
    };
    let mut evaluated_last = false;
    while state.update < cfg.max_updates && !state.early.should_stop() {
        let u = state.update + 1;
        let noise = (obj.noise_at)(u)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(u as u64);
        let indices = batches.next_indices();
        let loss = batch_step(&mut state.params, &indices, &noise, &mut rng, &obj).map_err(
            |e| match e {
                Error::Numeric(m) => Error::Numeric(format!("update {u}: {m}")),
                other => other,
            },
        )?;
        let pre = clip_gradients(&mut state.params, cfg.clip)
            .map_err(|e| Error::Numeric(format!("update {u}: {e}")))?
            .as_f64();
        let post = state.params.grad_norm().as_f64();
        state.optimizer.step(&mut state.params)?;
        if let Some(p) = state.params.iter().find(|p| !p.value.all_finite()) {
            return Err(Error::Numeric(format!(
                "update {u}: parameter {} became non-finite",
                p.id
            )));
        }
        state.update = u;
        report.updates += 1;
        report.losses.push(loss);
        report.grad_norms.push(pre);
        report.clipped_norms.push(post);
        evaluated_last = u % cfg.eval_interval == 0 || u == cfg.max_updates;
        let metric = if evaluated_last {
            let m = (obj.evaluate)(&state.params)?;
            if state.early.observe(u, m) {
                state.best = state.params.clone();
            }
            report.evaluations.push((u, m));
            Some(m)
        } else {
            None
        };
        if let Some(w) = log.as_deref_mut() {
            let m = metric.map(|m| format!("{m}")).unwrap_or_default();
            writeln!(w, "{u}\t{loss}\t{pre}\t{m}")?;
        }
        if metric.is_some() {
            if let Some(cb) = on_eval.as_deref_mut() {
                cb(&state)?;
            }
        }
    }
    if !evaluated_last && state.early.best.is_none() {
        let m = (obj.evaluate)(&state.params)?;
        state.early.observe(state.update, m);
        state.best = state.params.clone();
        report.evaluations.push((state.update, m));
    }
    report.best_metric = state.early.best;
    report.best_update = state.early.best_update;
    report.stopped_early = state.early.should_stop();
    Ok((state.best.clone(), report, state))
}
