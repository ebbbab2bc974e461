use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParameterSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::ParamInit;

/// Deep output: a linear map of the concatenated inputs to `2·width` units,
/// two-way maxout down to `width`, then a projection to vocabulary logits.
///
/// In fused arity an extra `W_lm` block reads the (gated) language-model
/// state; it is added after the base affine map, so a zero block leaves the
/// base computation untouched.
#[derive(Clone, Debug)]
pub struct DeepOutputLayer {
    pub inputs: Vec<usize>,
    pub lm_input: Option<usize>,
    pub width: usize,
    pub vocab: usize,
    w_f: ParamId,
    b_f: ParamId,
    w_lm: Option<ParamId>,
    w_o: ParamId,
    b_o: ParamId,
}

impl DeepOutputLayer {
    pub fn build<T: Scalar>(
        ps: &mut ParameterSet<T>,
        prefix: &str,
        inputs: &[usize],
        lm_input: Option<usize>,
        width: usize,
        vocab: usize,
        init: &mut ParamInit,
    ) -> Result<Self> {
        let total: usize = inputs.iter().sum();
        let w_f = ps.add(&format!("{prefix}.W_f"), init.gaussian(&[2 * width, total]))?;
        let b_f = ps.add(&format!("{prefix}.b_f"), Tensor::zeros(&[2 * width]))?;
        let w_lm = match lm_input {
            Some(d) => Some(ps.add(&format!("{prefix}.W_lm"), Tensor::zeros(&[2 * width, d]))?),
            None => None,
        };
        let w_o = ps.add(&format!("{prefix}.W_o"), init.gaussian(&[vocab, width]))?;
        let b_o = ps.add(&format!("{prefix}.b_o"), Tensor::zeros(&[vocab]))?;
        Ok(DeepOutputLayer {
            inputs: inputs.to_vec(),
            lm_input,
            width,
            vocab,
            w_f,
            b_f,
            w_lm,
            w_o,
            b_o,
        })
    }

    pub fn is_fused(&self) -> bool {
        self.lm_input.is_some()
    }

    /// `(W_f, b_f, W_o, b_o)`.
    pub fn base_params(&self) -> [ParamId; 4] {
        [self.w_f, self.b_f, self.w_o, self.b_o]
    }

    pub fn lm_block(&self) -> Option<ParamId> {
        self.w_lm
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        let mut v = self.base_params().to_vec();
        v.extend(self.w_lm);
        v
    }

    /// Vocabulary logits. `dropout` multiplies the post-maxout hidden layer.
    pub fn forward<T: Scalar>(
        &self,
        tape: &Tape<T>,
        b: &Bound,
        inputs: &[Var],
        lm_state: Option<Var>,
        dropout: Option<Var>,
    ) -> Result<Var> {
        match (self.w_lm, lm_state) {
            (Some(_), None) => {
                return Err(Error::Config(
                    "fused output layer needs a language-model state".into(),
                ))
            }
            (None, Some(_)) => {
                return Err(Error::Config(
                    "language-model state passed to a non-fused output layer".into(),
                ))
            }
            _ => {}
        }
        if inputs.len() != self.inputs.len() {
            return Err(Error::Config(format!(
                "output layer expects {} inputs, got {}",
                self.inputs.len(),
                inputs.len()
            )));
        }
        let x = tape.concat(inputs, 0)?;
        let pre = tape.matvec(b[self.w_f], x)?;
        let mut pre = tape.add(pre, b[self.b_f])?;
        if let (Some(w_lm), Some(s)) = (self.w_lm, lm_state) {
            let lm = tape.matvec(b[w_lm], s)?;
            pre = tape.add(pre, lm)?;
        }
        let mut hidden = tape.maxout2(pre)?;
        if let Some(mask) = dropout {
            hidden = tape.mul(hidden, mask)?;
        }
        let logits = tape.matvec(b[self.w_o], hidden)?;
        tape.add(logits, b[self.b_o])
    }
}
