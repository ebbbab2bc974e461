use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean and population standard deviation of the controller gate over all
/// emitted tokens of a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct GateStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    pub traces: Vec<Vec<f64>>,
}

pub fn gate_stats<T: Scalar>(traces: &[Vec<T>]) -> Result<GateStats> {
    let count: usize = traces.iter().map(Vec::len).sum();
    if count == 0 {
        return Err(Error::Domain("no gate values to summarize".into()));
    }
    let traces: Vec<Vec<f64>> = traces
        .iter()
        .map(|t| t.iter().map(|g| g.as_f64()).collect())
        .collect();
    let n = count as f64;
    let mean = traces.iter().flatten().sum::<f64>() / n;
    let var = traces
        .iter()
        .flatten()
        .map(|g| (g - mean) * (g - mean))
        .sum::<f64>()
        / n;
    Ok(GateStats {
        mean,
        std: var.sqrt(),
        count,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_two_point() {
        let s = gate_stats(&[vec![0.25f64; 3], vec![0.25]]).unwrap();
        assert_eq!((s.mean, s.std, s.count), (0.25, 0.0, 4));
        let s = gate_stats(&[vec![0.1f64], vec![0.3]]).unwrap();
        assert!((s.mean - 0.2).abs() < 1e-15);
        assert!((s.std - 0.1).abs() < 1e-15);
        assert!(gate_stats::<f64>(&[vec![]]).is_err());
    }
}
