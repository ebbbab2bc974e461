use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParameterSet};
use crate::scalar::Scalar;

use super::ParamInit;

/// Gated recurrent unit.
///
/// `W` stacks the input weights of the update gate, reset gate and candidate
/// (`3d × input`); the three recurrent matrices are separate `d × d`
/// orthonormal blocks.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
    w: ParamId,
    b: ParamId,
    u_z: ParamId,
    u_r: ParamId,
    u_h: ParamId,
}

impl GruCell {
    pub fn build<T: Scalar>(
        ps: &mut ParameterSet<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        init: &mut ParamInit,
    ) -> Result<Self> {
        let w = ps.add(&format!("{prefix}.W"), init.gaussian(&[3 * hidden, input]))?;
        let b = ps.add(
            &format!("{prefix}.b"),
            crate::tensor::Tensor::zeros(&[3 * hidden]),
        )?;
        let u_z = ps.add(&format!("{prefix}.U_z"), init.orthonormal(hidden))?;
        let u_r = ps.add(&format!("{prefix}.U_r"), init.orthonormal(hidden))?;
        let u_h = ps.add(&format!("{prefix}.U_h"), init.orthonormal(hidden))?;
        Ok(GruCell {
            input,
            hidden,
            w,
            b,
            u_z,
            u_r,
            u_h,
        })
    }

    pub fn input_weights(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }

    pub fn recurrent(&self) -> [ParamId; 3] {
        [self.u_z, self.u_r, self.u_h]
    }

    /// One step: `z = σ(W_z x + U_z s + b_z)`, `r = σ(W_r x + U_r s + b_r)`,
    /// `s̃ = tanh(W_h x + U_h (r ⊙ s) + b_h)`, `s' = (1 − z) ⊙ s + z ⊙ s̃`,
    /// where `x` is the concatenation of `inputs`.
    pub fn step<T: Scalar>(
        &self,
        tape: &Tape<T>,
        b: &Bound,
        s_prev: Var,
        inputs: &[Var],
    ) -> Result<Var> {
        let d = self.hidden;
        if tape.shape(s_prev) != [d] {
            return Err(Error::dim("gru_step", &[d], &tape.shape(s_prev)));
        }
        let x = if inputs.len() == 1 {
            inputs[0]
        } else {
            tape.concat(inputs, 0)?
        };
        if tape.shape(x) != [self.input] {
            return Err(Error::dim("gru_step", &[self.input], &tape.shape(x)));
        }
        let wx = tape.matvec(b[self.w], x)?;
        let wx = tape.add(wx, b[self.b])?;
        let wz = tape.slice(wx, 0, d)?;
        let wr = tape.slice(wx, d, d)?;
        let wh = tape.slice(wx, 2 * d, d)?;

        let uz = tape.matvec(b[self.u_z], s_prev)?;
        let z = tape.add(wz, uz)?;
        let z = tape.sigmoid(z);
        let ur = tape.matvec(b[self.u_r], s_prev)?;
        let r = tape.add(wr, ur)?;
        let r = tape.sigmoid(r);
        let rs = tape.mul(r, s_prev)?;
        let uh = tape.matvec(b[self.u_h], rs)?;
        let cand = tape.add(wh, uh)?;
        let cand = tape.tanh(cand);

        let keep = tape.one_minus(z);
        let keep = tape.mul(keep, s_prev)?;
        let take = tape.mul(z, cand)?;
        tape.add(keep, take)
    }
}
