use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Adadelta {
        rho: f64,
        eps: f64,
    },
    RmsProp {
        lr: f64,
        decay: f64,
        eps: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerKind {
    pub fn adadelta() -> Self {
        OptimizerKind::Adadelta {
            rho: 0.95,
            eps: 1e-6,
        }
    }

    pub fn rmsprop(lr: f64) -> Self {
        OptimizerKind::RmsProp {
            lr,
            decay: 0.95,
            eps: 1e-6,
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adadelta { .. } => "adadelta",
            OptimizerKind::RmsProp { .. } => "rmsprop",
            OptimizerKind::Adam { .. } => "adam",
        }
    }

    fn slots(&self) -> &'static [&'static str] {
        match self {
            OptimizerKind::Adadelta { .. } => &["sq_grad", "sq_update"],
            OptimizerKind::RmsProp { .. } => &["sq_grad"],
            OptimizerKind::Adam { .. } => &["m", "v"],
        }
    }
}

/// Per-parameter accumulators of one optimizer. `update_scale` multiplies
/// the realized step; the accumulators always see the unscaled step.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub update_scale: f64,
    pub steps: u64,
    /// `acc[param][slot]`, in `ParamId` order.
    acc: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, params: &ParameterSet<T>) -> Self {
        let acc = params
            .iter_insertion()
            .map(|p| {
                kind.slots()
                    .iter()
                    .map(|_| Tensor::zeros(p.value.shape()))
                    .collect()
            })
            .collect();
        Optimizer {
            kind,
            update_scale: 1.0,
            steps: 0,
            acc,
        }
    }

    pub fn with_update_scale(mut self, scale: f64) -> Self {
        self.update_scale = scale;
        self
    }

    /// Accumulators as named blocks `opt.<param id>.<slot>`.
    pub fn blocks(&self, params: &ParameterSet<T>) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (p, acc) in params.iter_insertion().zip(&self.acc) {
            for (slot, t) in self.kind.slots().iter().zip(acc) {
                out.push((format!("opt.{}.{}", p.id, slot), t.clone()));
            }
        }
        out
    }

    /// Restores accumulators written by [`blocks`](Self::blocks).
    pub fn restore(
        &mut self,
        params: &ParameterSet<T>,
        lookup: impl Fn(&str) -> Option<Tensor<T>>,
    ) -> Result<()> {
        for (p, acc) in params.iter_insertion().zip(&mut self.acc) {
            for (slot, t) in self.kind.slots().iter().zip(acc.iter_mut()) {
                let name = format!("opt.{}.{}", p.id, slot);
                let v = lookup(&name)
                    .ok_or_else(|| Error::Format(format!("missing optimizer block {name}")))?;
                if v.shape() != t.shape() {
                    return Err(Error::Format(format!(
                        "optimizer block {name} has the wrong shape"
                    )));
                }
                *t = v;
            }
        }
        Ok(())
    }

    /// Applies one update to every trainable parameter from its `grad`.
    pub fn step(&mut self, params: &mut ParameterSet<T>) -> Result<()> {
        if self.acc.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, set has {}",
                self.acc.len(),
                params.len()
            )));
        }
        self.steps += 1;
        let scale = T::of(self.update_scale);
        let t = self.steps as f64;
        let kind = self.kind;
        for (p, acc) in params.iter_mut().zip(&mut self.acc) {
            if acc.iter().any(|a| a.shape() != p.value.shape()) {
                return Err(Error::State(format!(
                    "optimizer state for {} has drifted in shape",
                    p.id
                )));
            }
            if !p.trainable {
                continue;
            }
            let g = p.grad.data();
            let (first, rest) = acc.split_at_mut(1);
            let a0 = first[0].data_mut();
            let w = p.value.data_mut();
            match kind {
                OptimizerKind::Adadelta { rho, eps } => {
                    let (rho, eps) = (T::of(rho), T::of(eps));
                    let a1 = rest[0].data_mut();
                    for i in 0..w.len() {
                        a0[i] = rho * a0[i] + (T::one() - rho) * g[i] * g[i];
                        let delta = -((a1[i] + eps).sqrt() / (a0[i] + eps).sqrt()) * g[i];
                        a1[i] = rho * a1[i] + (T::one() - rho) * delta * delta;
                        w[i] += scale * delta;
                    }
                }
                OptimizerKind::RmsProp { lr, decay, eps } => {
                    let (lr, decay, eps) = (T::of(lr), T::of(decay), T::of(eps));
                    for i in 0..w.len() {
                        a0[i] = decay * a0[i] + (T::one() - decay) * g[i] * g[i];
                        w[i] += scale * (-lr * g[i] / (a0[i] + eps).sqrt());
                    }
                }
                OptimizerKind::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    let c1 = T::of(1.0 - beta1.powf(t));
                    let c2 = T::of(1.0 - beta2.powf(t));
                    let (lr, b1, b2, eps) = (T::of(lr), T::of(beta1), T::of(beta2), T::of(eps));
                    let a1 = rest[0].data_mut();
                    for i in 0..w.len() {
                        a0[i] = b1 * a0[i] + (T::one() - b1) * g[i];
                        a1[i] = b2 * a1[i] + (T::one() - b2) * g[i] * g[i];
                        let m = a0[i] / c1;
                        let v = a1[i] / c2;
                        w[i] += scale * (-lr * m / (v.sqrt() + eps));
                    }
                }
            }
        }
        Ok(())
    }
}
