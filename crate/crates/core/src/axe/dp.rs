use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AxeConfig, Costs, Schedule};
use crate::error::Result;
use crate::types::{LogProbMatrix, TargetSequence};

/// The `(n+1) x (m+1)` accumulator. `get(i, j)` is the minimum cost of
/// aligning the first `i` targets with the first `j` predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpMatrix {
    n: usize,
    m: usize,
    values: Vec<f64>,
}

impl DpMatrix {
    fn filled(n: usize, m: usize) -> Self {
        DpMatrix {
            n,
            m,
            values: vec![f64::NAN; (n + 1) * (m + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * (self.m + 1) + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * (self.m + 1) + j] = v;
    }

    /// `A[n][m]`, the AXE loss.
    pub fn loss(&self) -> f64 {
        self.get(self.n, self.m)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs_diff(&self, other: &DpMatrix) -> f64 {
        assert_eq!((self.n, self.m), (other.n, other.m));
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| if a == b { 0.0 } else { (a - b).abs() })
            .fold(0.0, f64::max)
    }
}

/// Candidate values of the three operators entering interior cell (i, j),
/// in priority order: align, skip prediction, skip target.
#[inline]
pub(super) fn candidates(a: &DpMatrix, c: &Costs, i: usize, j: usize) -> [f64; 3] {
    [
        a.get(i - 1, j - 1) + c.align(i, j),
        a.get(i, j - 1) + c.skip_prediction(j),
        a.get(i - 1, j) + c.skip_target(i, j),
    ]
}

/// Minimum with fixed priority: an operator later in the list only wins if
/// strictly smaller.
#[inline]
pub(super) fn argmin3(c: [f64; 3]) -> usize {
    let mut best = 0;
    for k in 1..3 {
        if c[k] < c[best] {
            best = k;
        }
    }
    best
}

#[inline]
fn cell(a: &DpMatrix, c: &Costs, i: usize, j: usize) -> f64 {
    match (i, j) {
        (0, 0) => 0.0,
        (0, j) => a.get(0, j - 1) + c.skip_prediction(j),
        (i, 0) => a.get(i - 1, 0) + c.skip_target(i, 0),
        (i, j) => {
            let cand = candidates(a, c, i, j);
            cand[argmin3(cand)]
        }
    }
}

/// Row-major fill.
pub fn axe_forward_naive(y: &TargetSequence, p: &LogProbMatrix, cfg: &AxeConfig) -> Result<DpMatrix> {
    let c = Costs::new(y, p, cfg)?;
    let (n, m) = (c.n(), c.m());
    let mut a = DpMatrix::filled(n, m);
    for i in 0..=n {
        for j in 0..=m {
            let v = cell(&a, &c, i, j);
            a.set(i, j, v);
        }
    }
    Ok(a)
}

/// Fill by anti-diagonals `i + j = k`. Each cell reads only diagonals
/// `k - 1` and `k - 2`, so the cells of one diagonal are independent.
pub fn axe_forward_antidiagonal(y: &TargetSequence, p: &LogProbMatrix, cfg: &AxeConfig) -> Result<DpMatrix> {
    let c = Costs::new(y, p, cfg)?;
    let (n, m) = (c.n(), c.m());
    let mut a = DpMatrix::filled(n, m);
    a.set(0, 0, 0.0);
    let mut diag = Vec::with_capacity(n.min(m) + 1);
    for k in 1..=(n + m) {
        let lo = k.saturating_sub(m);
        let hi = k.min(n);
        diag.clear();
        diag.extend((lo..=hi).map(|i| cell(&a, &c, i, k - i)));
        for (i, v) in (lo..=hi).zip(&diag) {
            a.set(i, k - i, *v);
        }
    }
    Ok(a)
}

/// Fills the DP matrix with the schedule chosen in `cfg`.
pub fn axe_forward(y: &TargetSequence, p: &LogProbMatrix, cfg: &AxeConfig) -> Result<DpMatrix> {
    match cfg.schedule {
        Schedule::Naive => axe_forward_naive(y, p, cfg),
        Schedule::Antidiagonal => axe_forward_antidiagonal(y, p, cfg),
    }
}

pub fn axe_loss(y: &TargetSequence, p: &LogProbMatrix, cfg: &AxeConfig) -> Result<f64> {
    Ok(axe_forward(y, p, cfg)?.loss())
}

/// Losses for independent instances, computed in parallel; output order
/// matches input order.
pub fn axe_loss_batch(batch: &[(TargetSequence, LogProbMatrix)], cfg: &AxeConfig) -> Result<Vec<f64>> {
    batch.par_iter().map(|(y, p)| axe_loss(y, p, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Vocabulary;

    fn vocab() -> Vocabulary {
        Vocabulary::build(&["a", "b", "c"]).unwrap()
    }

    #[test]
    fn perfect_single_prediction_costs_nothing() {
        let v = vocab();
        let y = TargetSequence::new(vec![2], &v).unwrap();
        let mut row = vec![f64::NEG_INFINITY; v.size()];
        row[2] = 0.0;
        let p = LogProbMatrix::from_rows(&[row]).unwrap();
        let a = axe_forward_naive(&y, &p, &AxeConfig::default()).unwrap();
        assert_eq!(a.loss(), 0.0);
        assert_eq!(a.get(0, 0), 0.0);
    }

    #[test]
    fn uniform_single_prediction_aligns() {
        let v = vocab();
        let y = TargetSequence::new(vec![3], &v).unwrap();
        let p = LogProbMatrix::uniform(1, v.size());
        for delta in [0.0, 1.0, 3.0] {
            let cfg = AxeConfig::with_delta(delta).unwrap();
            let a = axe_forward(&y, &p, &cfg).unwrap();
            let lv = (v.size() as f64).ln();
            assert!((a.loss() - lv).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_rows_follow_recurrence() {
        let v = vocab();
        let y = TargetSequence::new(vec![2, 4], &v).unwrap();
        let p = LogProbMatrix::from_logits(3, 5, &[0.1, 0.5, 1.0, -1.0, 2.0, 0.0, 0.3, -0.2, 1.5, 0.7, 1.0, 1.0, 0.0, 0.0, 3.0])
            .unwrap();
        let cfg = AxeConfig::with_delta(2.0).unwrap();
        let a = axe_forward(&y, &p, &cfg).unwrap();
        assert_eq!(a.get(1, 0), -2.0 * p.get(0, 2));
        assert_eq!(a.get(2, 0), a.get(1, 0) - 2.0 * p.get(0, 4));
        assert_eq!(a.get(0, 1), -p.get(0, 0));
        assert_eq!(a.get(0, 3), a.get(0, 2) - p.get(2, 0));
    }

    #[test]
    fn out_of_range_target_is_rejected() {
        let v = vocab();
        let y = TargetSequence::new(vec![4], &v).unwrap();
        let p = LogProbMatrix::uniform(2, 3);
        let err = axe_forward(&y, &p, &AxeConfig::default()).unwrap_err();
        assert!(matches!(err, crate::AxeError::TokenOutOfRange { pos: 1, id: 4, .. }));
    }

    #[test]
    fn negative_delta_is_rejected() {
        assert!(AxeConfig::with_delta(-1.0).is_err());
        assert!(AxeConfig::with_delta(f64::NAN).is_err());
    }

    #[test]
    fn batch_matches_single() {
        let v = vocab();
        let y = TargetSequence::new(vec![2, 3], &v).unwrap();
        let p = LogProbMatrix::from_logits(2, 5, &[0.0, 1.0, 2.0, 0.5, 0.1, 1.0, 0.0, 0.0, 2.0, 0.3]).unwrap();
        let cfg = AxeConfig::default();
        let out = axe_loss_batch(&[(y.clone(), p.clone()), (y.clone(), p.clone())], &cfg).unwrap();
        assert_eq!(out, vec![axe_loss(&y, &p, &cfg).unwrap(); 2]);
    }
}
