//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::params::{ParamId, ParameterSet};
use crate::scalar::Scalar;

/// Worst disagreement found for one parameter.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub id: String,
    pub elements: usize,
    pub max_rel_err: f64,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// `|a - n| / max(|a|, |n|)`; pairs where both magnitudes fall below
/// `abs_floor` count as agreeing.
pub fn relative_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < abs_floor {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Compares `params[*].grad` (already filled by the caller) against central
/// differences of `loss` for every element of every trainable parameter.
pub fn check_gradients<T: Scalar>(
    params: &mut ParameterSet<T>,
    step: f64,
    abs_floor: f64,
    mut loss: impl FnMut(&ParameterSet<T>) -> Result<T>,
) -> Result<GradCheckReport> {
    let mut out = Vec::new();
    for i in 0..params.len() {
        let pid = ParamId(i);
        if !params.get(pid).trainable {
            continue;
        }
        let n = params.get(pid).value.len();
        let mut check = ParamCheck {
            id: params.get(pid).id.clone(),
            elements: n,
            max_rel_err: 0.0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for e in 0..n {
            let orig = params.get(pid).value.data()[e];
            params.get_mut(pid).value.data_mut()[e] = orig + T::of(step);
            let up = loss(params)?.as_f64();
            params.get_mut(pid).value.data_mut()[e] = orig - T::of(step);
            let down = loss(params)?.as_f64();
            params.get_mut(pid).value.data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = params.get(pid).grad.data()[e].as_f64();
            let rel = relative_error(analytic, numeric, abs_floor);
            if rel > check.max_rel_err {
                check.max_rel_err = rel;
                check.worst_analytic = analytic;
                check.worst_numeric = numeric;
            }
        }
        out.push(check);
    }
    Ok(GradCheckReport { params: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn detects_correct_and_wrong_gradients() {
        let mut ps = ParameterSet::<f64>::new();
        ps.add("w", Tensor::vector(vec![0.3, -0.7, 1.1])).unwrap();
        let loss = |ps: &ParameterSet<f64>| -> Result<f64> {
            let tape = Tape::<f64>::new();
            let b = ps.bind(&tape, 0);
            let t = tape.tanh(b[ParamId(0)]);
            let s = tape.dot(t, t)?;
            Ok(tape.scalar_value(s))
        };
        {
            let tape = Tape::<f64>::new();
            let b = ps.bind(&tape, 0);
            let t = tape.tanh(b[ParamId(0)]);
            let s = tape.dot(t, t).unwrap();
            let g = tape.backward(s).unwrap();
            ps.accumulate(&g, &b, 1.0);
        }
        let rep = check_gradients(&mut ps, 1e-5, 1e-10, loss).unwrap();
        assert!(rep.max_rel_err() < 1e-7, "{rep:?}");
        ps.get_mut(ParamId(0)).grad.data_mut()[1] += 0.01;
        let rep = check_gradients(&mut ps, 1e-5, 1e-10, loss).unwrap();
        assert!(rep.max_rel_err() > 1e-3);
    }
}
