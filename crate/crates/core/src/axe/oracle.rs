//! Exhaustive reference implementations. Both enumerate explicitly and share
//! nothing with the DP fill beyond the operator cost table.

use super::{AlignmentTrace, AxeConfig, AxeOp, Costs};
use crate::error::{AxeError, Result};
use crate::types::{LogProbMatrix, TargetSequence, EPSILON_ID};

pub const ORACLE_MAX_LEN: usize = 7;

fn check_scale(n: usize, m: usize) -> Result<()> {
    if n > ORACLE_MAX_LEN || m > ORACLE_MAX_LEN {
        return Err(AxeError::OracleScale { n, m, limit: ORACLE_MAX_LEN });
    }
    Ok(())
}

struct PathSearch<'a> {
    c: Costs<'a>,
    stack: Vec<AxeOp>,
    best: f64,
    best_ops: Vec<AxeOp>,
}

impl PathSearch<'_> {
    fn walk(&mut self, i: usize, j: usize, cost: f64) {
        let (n, m) = (self.c.n(), self.c.m());
        if i == n && j == m {
            if self.best_ops.is_empty() || cost < self.best {
                self.best = cost;
                self.best_ops = self.stack.clone();
            }
            return;
        }
        if i < n && j < m {
            let step = self.c.align(i + 1, j + 1);
            self.stack.push(AxeOp::align(i + 1, j + 1, step));
            self.walk(i + 1, j + 1, cost + step);
            self.stack.pop();
        }
        if j < m {
            let step = self.c.skip_prediction(j + 1);
            self.stack.push(AxeOp::skip_prediction(j + 1, step));
            self.walk(i, j + 1, cost + step);
            self.stack.pop();
        }
        if i < n {
            // column 0 is charged against prediction 1
            let step = self.c.skip_target(i + 1, j);
            self.stack.push(AxeOp::skip_target(i + 1, j.max(1), step));
            self.walk(i + 1, j, cost + step);
            self.stack.pop();
        }
    }
}

/// Enumerates every lattice path from (0,0) to (n,m) built from the three
/// operators and returns the cheapest one.
pub fn brute_force_paths(y: &TargetSequence, p: &LogProbMatrix, cfg: &AxeConfig) -> Result<(f64, AlignmentTrace)> {
    let c = Costs::new(y, p, cfg)?;
    check_scale(c.n(), c.m())?;
    let mut s = PathSearch {
        c,
        stack: Vec::new(),
        best: f64::INFINITY,
        best_ops: Vec::new(),
    };
    s.walk(0, 0, 0.0);
    let trace = AlignmentTrace::from_ops(s.best_ops, y.len(), f64::NAN);
    Ok((s.best, trace))
}

/// Minimum over all non-decreasing maps from targets to predictions of
/// the aligned cross entropy plus blank penalties on unused predictions.
/// Has no skip penalty; it corresponds to δ = 1.
pub fn brute_force_monotone_maps(y: &TargetSequence, p: &LogProbMatrix) -> Result<(f64, Vec<usize>)> {
    let n = y.len();
    let m = p.m();
    check_scale(n, m)?;
    Costs::new(y, p, &AxeConfig::default())?;
    let ys = y.ids();
    let mut alpha = vec![1usize; n];
    let mut best = f64::INFINITY;
    let mut best_alpha = alpha.clone();
    loop {
        let mut used = vec![false; m];
        let mut cost = 0.0;
        for (i, &a) in alpha.iter().enumerate() {
            cost -= p.get(a - 1, ys[i]);
            used[a - 1] = true;
        }
        for (k, u) in used.iter().enumerate() {
            if !u {
                cost -= p.get(k, EPSILON_ID);
            }
        }
        if cost < best {
            best = cost;
            best_alpha = alpha.clone();
        }
        // next non-decreasing sequence in lexicographic order
        let Some(pos) = (0..n).rev().find(|&k| alpha[k] < m) else {
            break;
        };
        let v = alpha[pos] + 1;
        for a in alpha[pos..].iter_mut() {
            *a = v;
        }
    }
    Ok((best, best_alpha))
}
