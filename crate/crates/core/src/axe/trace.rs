use std::fmt;

use serde::{Deserialize, Serialize};

use super::dp::{argmin3, candidates, DpMatrix};
use super::{axe_forward, AxeConfig, Costs};
use crate::error::{AxeError, Result};
use crate::types::{LogProbMatrix, TargetSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Align,
    SkipPrediction,
    SkipTarget,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Align => "Align",
            OpKind::SkipPrediction => "SkipPrediction",
            OpKind::SkipTarget => "SkipTarget",
        }
    }
}

/// One step of an alignment path. Positions are 1-based; `i` is `None`
/// only for `SkipPrediction`. For `SkipTarget`, `j` is the prediction that
/// the skipped target is charged against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxeOp {
    pub kind: OpKind,
    pub i: Option<usize>,
    pub j: Option<usize>,
    pub cost: f64,
}

impl AxeOp {
    pub fn align(i: usize, j: usize, cost: f64) -> Self {
        AxeOp { kind: OpKind::Align, i: Some(i), j: Some(j), cost }
    }

    pub fn skip_prediction(j: usize, cost: f64) -> Self {
        AxeOp { kind: OpKind::SkipPrediction, i: None, j: Some(j), cost }
    }

    pub fn skip_target(i: usize, j: usize, cost: f64) -> Self {
        AxeOp { kind: OpKind::SkipTarget, i: Some(i), j: Some(j), cost }
    }

    /// Same op ignoring cost.
    pub fn same_step(&self, other: &AxeOp) -> bool {
        self.kind == other.kind && self.i == other.i && self.j == other.j
    }
}

impl fmt::Display for AxeOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.i, self.j) {
            (OpKind::Align, Some(i), Some(j)) => write!(f, "Align({i}->{j})"),
            (OpKind::SkipPrediction, _, Some(j)) => write!(f, "SkipPrediction({j})"),
            (OpKind::SkipTarget, Some(i), Some(j)) => write!(f, "SkipTarget({i} at {j})"),
            _ => write!(f, "{:?}", self),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub align: usize,
    pub skip_prediction: usize,
    pub skip_target: usize,
}

impl OpCounts {
    pub fn add(&mut self, other: &OpCounts) {
        self.align += other.align;
        self.skip_prediction += other.skip_prediction;
        self.skip_target += other.skip_target;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTrace {
    pub ops: Vec<AxeOp>,
    /// `alpha[i - 1]` is the prediction that target `i` is charged against.
    pub alpha: Vec<usize>,
    pub total_cost: f64,
    pub counts: OpCounts,
    /// Smallest gap between the chosen operator and the best alternative
    /// over all cells on the path; `inf` when no cell had an alternative.
    /// Zero means the optimum is not unique.
    pub margin: f64,
}

impl AlignmentTrace {
    /// Assembles a trace from ops listed from (0,0) towards (n,m).
    pub fn from_ops(ops: Vec<AxeOp>, n: usize, margin: f64) -> Self {
        let mut alpha = vec![0; n];
        let mut counts = OpCounts::default();
        let mut total_cost = 0.0;
        for op in &ops {
            total_cost += op.cost;
            match op.kind {
                OpKind::Align => counts.align += 1,
                OpKind::SkipPrediction => counts.skip_prediction += 1,
                OpKind::SkipTarget => counts.skip_target += 1,
            }
            if let (Some(i), Some(j)) = (op.i, op.j) {
                alpha[i - 1] = j;
            }
        }
        AlignmentTrace {
            ops,
            alpha,
            total_cost,
            counts,
            margin,
        }
    }

    pub fn is_unique(&self, tolerance: f64) -> bool {
        self.margin > tolerance
    }
}

/// Walks back from `(n, m)` choosing, at each interior cell, the operator
/// that produced the minimum with priority Align > SkipPrediction >
/// SkipTarget.
pub fn axe_backtrace(a: &DpMatrix, y: &TargetSequence, p: &LogProbMatrix, cfg: &AxeConfig) -> Result<AlignmentTrace> {
    let c = Costs::new(y, p, cfg)?;
    if a.n() != c.n() || a.m() != c.m() {
        return Err(AxeError::Shape(format!(
            "DP matrix is {}x{} but instance is {}x{}",
            a.n() + 1,
            a.m() + 1,
            c.n() + 1,
            c.m() + 1
        )));
    }
    let (mut i, mut j) = (c.n(), c.m());
    let mut ops = Vec::with_capacity(i + j);
    let mut margin = f64::INFINITY;
    while i > 0 || j > 0 {
        if i == 0 {
            ops.push(AxeOp::skip_prediction(j, c.skip_prediction(j)));
            j -= 1;
        } else if j == 0 {
            ops.push(AxeOp::skip_target(i, Costs::prediction_of_skip(0), c.skip_target(i, 0)));
            i -= 1;
        } else {
            let cand = candidates(a, &c, i, j);
            let k = argmin3(cand);
            let second = (0..3).filter(|&o| o != k).map(|o| cand[o]).fold(f64::INFINITY, f64::min);
            if second.is_finite() {
                margin = margin.min(second - cand[k]);
            }
            match k {
                0 => {
                    ops.push(AxeOp::align(i, j, c.align(i, j)));
                    i -= 1;
                    j -= 1;
                }
                1 => {
                    ops.push(AxeOp::skip_prediction(j, c.skip_prediction(j)));
                    j -= 1;
                }
                _ => {
                    ops.push(AxeOp::skip_target(i, j, c.skip_target(i, j)));
                    i -= 1;
                }
            }
        }
    }
    ops.reverse();
    Ok(AlignmentTrace::from_ops(ops, c.n(), margin))
}

/// Forward fill followed by backtrace.
pub fn axe_align(y: &TargetSequence, p: &LogProbMatrix, cfg: &AxeConfig) -> Result<(DpMatrix, AlignmentTrace)> {
    let a = axe_forward(y, p, cfg)?;
    let t = axe_backtrace(&a, y, p, cfg)?;
    Ok((a, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Vocabulary;

    fn one_hot_rows(ids: &[usize], v: usize) -> LogProbMatrix {
        let rows: Vec<Vec<f64>> = ids
            .iter()
            .map(|&id| (0..v).map(|t| if t == id { 0.0 } else { f64::NEG_INFINITY }).collect())
            .collect();
        LogProbMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn perfect_diagonal_is_all_align() {
        let v = Vocabulary::build(&["a", "b", "c"]).unwrap();
        let y = TargetSequence::new(vec![2, 3, 4, 2], &v).unwrap();
        let p = one_hot_rows(y.ids(), v.size());
        let (a, t) = axe_align(&y, &p, &AxeConfig::default()).unwrap();
        assert_eq!(a.loss(), 0.0);
        assert_eq!(t.counts, OpCounts { align: 4, skip_prediction: 0, skip_target: 0 });
        assert_eq!(t.alpha, vec![1, 2, 3, 4]);
        assert!(t.ops.iter().all(|o| o.kind == OpKind::Align && o.i == o.j));
    }

    #[test]
    fn mismatched_matrix_is_rejected() {
        let v = Vocabulary::build(&["a", "b"]).unwrap();
        let y = TargetSequence::new(vec![2, 3], &v).unwrap();
        let p = LogProbMatrix::uniform(3, v.size());
        let a = axe_forward(&y, &p, &AxeConfig::default()).unwrap();
        let p2 = LogProbMatrix::uniform(2, v.size());
        assert!(matches!(
            axe_backtrace(&a, &y, &p2, &AxeConfig::default()),
            Err(AxeError::Shape(_))
        ));
    }

    #[test]
    fn trace_cost_matches_dp_on_small_instance() {
        let v = Vocabulary::build(&["a", "b", "c"]).unwrap();
        let y = TargetSequence::new(vec![2, 4, 3], &v).unwrap();
        let logits: Vec<f64> = (0..4 * 5).map(|k| ((k * 37 % 11) as f64) * 0.3 - 1.0).collect();
        let p = LogProbMatrix::from_logits(4, 5, &logits).unwrap();
        let cfg = AxeConfig::with_delta(1.5).unwrap();
        let (a, t) = axe_align(&y, &p, &cfg).unwrap();
        // recompute each op cost from the operator table
        let recomputed: f64 = t
            .ops
            .iter()
            .map(|o| match o.kind {
                OpKind::Align => -p.get(o.j.unwrap() - 1, y.ids()[o.i.unwrap() - 1]),
                OpKind::SkipPrediction => -p.get(o.j.unwrap() - 1, 0),
                OpKind::SkipTarget => -1.5 * p.get(o.j.unwrap() - 1, y.ids()[o.i.unwrap() - 1]),
            })
            .sum();
        assert!((recomputed - a.loss()).abs() < 1e-9);
        assert!((t.total_cost - a.loss()).abs() < 1e-9);
        assert_eq!(t.counts.align + t.counts.skip_target, 3);
        assert_eq!(t.counts.align + t.counts.skip_prediction, 4);
    }

    #[test]
    fn tied_rows_have_zero_margin() {
        let v = Vocabulary::build(&["a", "b"]).unwrap();
        let y = TargetSequence::new(vec![2], &v).unwrap();
        let row = vec![(0.3f64).ln(), (0.05f64).ln(), (0.5f64).ln(), (0.15f64).ln()];
        let p = LogProbMatrix::from_rows(&[row.clone(), row]).unwrap();
        let (_, t) = axe_align(&y, &p, &AxeConfig::default()).unwrap();
        assert_eq!(t.margin, 0.0);
        assert!(!t.is_unique(1e-3));
    }

    #[test]
    fn op_display() {
        assert_eq!(AxeOp::align(1, 2, 0.0).to_string(), "Align(1->2)");
        assert_eq!(AxeOp::skip_prediction(1, 0.0).to_string(), "SkipPrediction(1)");
        assert_eq!(AxeOp::skip_target(3, 3, 0.0).to_string(), "SkipTarget(3 at 3)");
    }
}
