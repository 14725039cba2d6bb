use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{axe_align, AlignmentTrace, AxeConfig, OpKind};
use crate::error::Result;
use crate::types::{LogProbMatrix, TargetSequence, EPSILON_ID};

/// Sparse gradient of the loss with respect to `log P_j(v)`, keyed by
/// 1-based prediction position `j` and token id `v`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossGradient {
    pub entries: BTreeMap<(usize, usize), f64>,
}

impl LossGradient {
    fn add(&mut self, j: usize, v: usize, coef: f64) {
        *self.entries.entry((j, v)).or_insert(0.0) += coef;
    }

    pub fn get(&self, j: usize, v: usize) -> f64 {
        self.entries.get(&(j, v)).copied().unwrap_or(0.0)
    }

    /// Per-op subgradient along a trace: Align adds -1 at `(j, Y_i)`,
    /// SkipPrediction -1 at `(j, ε)`, SkipTarget -δ at `(j, Y_i)`.
    pub fn from_trace(trace: &AlignmentTrace, y: &TargetSequence, delta: f64) -> Self {
        let mut g = LossGradient::default();
        for op in &trace.ops {
            let j = op.j.expect("every op names a prediction");
            match op.kind {
                OpKind::Align => g.add(j, y.ids()[op.i.unwrap() - 1], -1.0),
                OpKind::SkipPrediction => g.add(j, EPSILON_ID, -1.0),
                OpKind::SkipTarget => g.add(j, y.ids()[op.i.unwrap() - 1], -delta),
            }
        }
        g
    }

    /// Row-major `m x V` dense copy with 0-based rows.
    pub fn to_dense(&self, m: usize, vocab_size: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * vocab_size];
        for (&(j, v), &c) in &self.entries {
            out[(j - 1) * vocab_size + v] += c;
        }
        out
    }
}

/// Loss and its subgradient through the deterministic optimal path.
pub fn axe_gradient(y: &TargetSequence, p: &LogProbMatrix, cfg: &AxeConfig) -> Result<(f64, LossGradient, AlignmentTrace)> {
    let (a, trace) = axe_align(y, p, cfg)?;
    let g = LossGradient::from_trace(&trace, y, cfg.delta);
    Ok((a.loss(), g, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::axe::axe_loss;
    use crate::types::Vocabulary;

    #[test]
    fn diagonal_gradient_is_minus_one_on_targets() {
        let v = Vocabulary::build(&["a", "b", "c"]).unwrap();
        let y = TargetSequence::new(vec![4, 2, 3], &v).unwrap();
        let rows: Vec<Vec<f64>> = y
            .ids()
            .iter()
            .map(|&id| (0..v.size()).map(|t| if t == id { (0.9f64).ln() } else { (0.025f64).ln() }).collect())
            .collect();
        let p = LogProbMatrix::from_rows(&rows).unwrap();
        let (_, g, _) = axe_gradient(&y, &p, &AxeConfig::default()).unwrap();
        assert_eq!(g.entries.len(), 3);
        for (j, &id) in y.ids().iter().enumerate() {
            assert_eq!(g.get(j + 1, id), -1.0);
        }
    }

    #[test]
    fn forced_skip_target_carries_delta() {
        // two targets, one prediction: exactly one skip target is required
        let v = Vocabulary::build(&["a", "b"]).unwrap();
        let y = TargetSequence::new(vec![2, 3], &v).unwrap();
        let p = LogProbMatrix::from_rows(&[vec![(0.1f64).ln(), (0.1f64).ln(), (0.5f64).ln(), (0.3f64).ln()]]).unwrap();
        let cfg = AxeConfig::with_delta(3.0).unwrap();
        let (loss, g, t) = axe_gradient(&y, &p, &cfg).unwrap();
        assert_eq!(t.counts.skip_target, 1);
        let skipped = t.ops.iter().find(|o| o.kind == OpKind::SkipTarget).unwrap();
        let token = y.ids()[skipped.i.unwrap() - 1];
        assert_eq!(g.get(skipped.j.unwrap(), token), -3.0);
        assert!((loss - axe_loss(&y, &p, &cfg).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn dense_layout_is_row_major() {
        let mut g = LossGradient::default();
        g.add(2, 1, -1.0);
        let d = g.to_dense(2, 3);
        assert_eq!(d, vec![0.0, 0.0, 0.0, 0.0, -1.0, 0.0]);
    }
}
