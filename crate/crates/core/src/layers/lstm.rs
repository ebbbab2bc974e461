use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParameterSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::ParamInit;

/// Hidden and cell state of an LSTM, as tape variables.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Long short-term memory cell. Gate rows are ordered input, forget, output,
/// candidate in both `W` (`4d × input`) and `U` (`4d × d`).
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

impl LstmCell {
    pub fn build<T: Scalar>(
        ps: &mut ParameterSet<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        init: &mut ParamInit,
    ) -> Result<Self> {
        let w = ps.add(&format!("{prefix}.W"), init.gaussian(&[4 * hidden, input]))?;
        let u = ps.add(&format!("{prefix}.U"), init.orthonormal_stack(4, hidden)?)?;
        let mut bias = vec![T::zero(); 4 * hidden];
        bias[hidden..2 * hidden].fill(T::one());
        let b = ps.add(&format!("{prefix}.b"), Tensor::vector(bias))?;
        Ok(LstmCell {
            input,
            hidden,
            w,
            u,
            b,
        })
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }

    pub fn weights(&self) -> (ParamId, ParamId) {
        (self.w, self.u)
    }

    pub fn zero_state<T: Scalar>(&self, tape: &Tape<T>) -> LstmState {
        LstmState {
            h: tape.constant(Tensor::zeros(&[self.hidden])),
            c: tape.constant(Tensor::zeros(&[self.hidden])),
        }
    }

    pub fn step<T: Scalar>(
        &self,
        tape: &Tape<T>,
        b: &Bound,
        state: LstmState,
        x: Var,
    ) -> Result<LstmState> {
        let d = self.hidden;
        if tape.shape(x) != [self.input] {
            return Err(Error::dim("lstm_step", &[self.input], &tape.shape(x)));
        }
        if tape.shape(state.h) != [d] || tape.shape(state.c) != [d] {
            return Err(Error::dim("lstm_step", &[d], &tape.shape(state.h)));
        }
        let wx = tape.matvec(b[self.w], x)?;
        let uh = tape.matvec(b[self.u], state.h)?;
        let pre = tape.add(wx, uh)?;
        let pre = tape.add(pre, b[self.b])?;
        let i = tape.slice(pre, 0, d)?;
        let i = tape.sigmoid(i);
        let f = tape.slice(pre, d, d)?;
        let f = tape.sigmoid(f);
        let o = tape.slice(pre, 2 * d, d)?;
        let o = tape.sigmoid(o);
        let g = tape.slice(pre, 3 * d, d)?;
        let g = tape.tanh(g);
        let keep = tape.mul(f, state.c)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::sigmoid;

    fn cell(input: usize, hidden: usize) -> (ParameterSet<f64>, LstmCell) {
        let mut ps = ParameterSet::new();
        let c = LstmCell::build(&mut ps, "l", input, hidden, &mut ParamInit::new(4)).unwrap();
        (ps, c)
    }

    fn run(
        ps: &ParameterSet<f64>,
        c: &LstmCell,
        h: &[f64],
        cs: &[f64],
        x: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let tape = Tape::<f64>::new();
        let b = ps.bind(&tape, 0);
        let st = LstmState {
            h: tape.constant(Tensor::vector(h.to_vec())),
            c: tape.constant(Tensor::vector(cs.to_vec())),
        };
        let x = tape.constant(Tensor::vector(x.to_vec()));
        let out = c.step(&tape, &b, st, x).unwrap();
        (tape.value(out.h).into_vec(), tape.value(out.c).into_vec())
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let (ps, c) = cell(2, 3);
        assert_eq!(
            ps.value(c.b).data(),
            &[0., 0., 0., 1., 1., 1., 0., 0., 0., 0., 0., 0.]
        );
    }

    #[test]
    fn zero_weights_zero_state() {
        let (mut ps, c) = cell(2, 3);
        for p in ps.iter_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        let (h, cs) = run(&ps, &c, &[0.0; 3], &[0.0; 3], &[0.7, -0.2]);
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(cs, vec![0.0; 3]);
    }

    #[test]
    fn saturated_forget_and_closed_input_keep_memory() {
        let (mut ps, c) = cell(2, 2);
        let mut bias = vec![0.0; 8];
        bias[0..2].fill(-1e4);
        bias[2..4].fill(1e4);
        ps.get_mut(c.b).value = Tensor::vector(bias);
        let c_prev = [0.37, -1.25];
        let (_, cs) = run(&ps, &c, &[0.1, 0.2], &c_prev, &[0.5, 0.5]);
        assert_eq!(cs, c_prev.to_vec());
    }

    #[test]
    fn scalar_cell_matches_hand_evaluation() {
        let (mut ps, c) = cell(1, 1);
        ps.get_mut(c.w).value = Tensor::from_f64(&[4, 1], &[0.2, -0.5, 0.9, 0.4]).unwrap();
        ps.get_mut(c.u).value = Tensor::from_f64(&[4, 1], &[0.3, 0.6, -0.7, 1.1]).unwrap();
        ps.get_mut(c.b).value = Tensor::from_f64(&[4], &[0.05, 1.0, -0.2, 0.1]).unwrap();
        let (h0, c0, x): (f64, f64, f64) = (0.4, -0.8, 1.3);
        let i = sigmoid(0.2 * x + 0.3 * h0 + 0.05);
        let f = sigmoid(-0.5 * x + 0.6 * h0 + 1.0);
        let o = sigmoid(0.9 * x - 0.7 * h0 - 0.2);
        let g = (0.4 * x + 1.1 * h0 + 0.1).tanh();
        let c1 = f * c0 + i * g;
        let h1 = o * c1.tanh();
        let (h, cs) = run(&ps, &c, &[h0], &[c0], &[x]);
        assert!((h[0] - h1).abs() < 1e-12);
        assert!((cs[0] - c1).abs() < 1e-12);
    }

    #[test]
    fn hidden_is_bounded() {
        let (mut ps, c) = cell(3, 4);
        let mut init = ParamInit::with_std(1, 5.0);
        for p in ps.iter_mut() {
            p.value = init.gaussian(p.value.shape());
        }
        let (h, _) = run(&ps, &c, &[0.0; 4], &[0.0; 4], &[3.0, -2.0, 7.0]);
        assert!(h.iter().all(|v| v.abs() < 1.0));
    }
}
