//! Aligned cross entropy: the monotonic-alignment dynamic program, its
//! backtrace and gradient, and two brute-force reference implementations.
//!
//! Indexing follows the DP grid: target positions `i` run over `1..=n`,
//! prediction positions `j` over `1..=m`, and row/column 0 are the empty
//! prefixes. Everything exposed in [`AxeOp`] and [`LossGradient`] uses these
//! 1-based positions; [`LogProbMatrix`](crate::types::LogProbMatrix) rows are
//! 0-based, so prediction `j` is row `j - 1`.
//!
//! The three local operators and their costs are
//!
//! | op              | move              | cost                    |
//! |-----------------|-------------------|-------------------------|
//! | Align           | (i-1,j-1) → (i,j) | `-log P_j(Y_i)`         |
//! | SkipPrediction  | (i,j-1) → (i,j)   | `-log P_j(ε)`           |
//! | SkipTarget      | (i-1,j) → (i,j)   | `-δ · log P_j(Y_i)`     |
//!
//! with column 0 charging skipped targets against the first prediction.

mod dp;
mod grad;
mod oracle;
mod trace;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, AxeError, Result};
use crate::types::{LogProbMatrix, TargetSequence};

pub use dp::{axe_forward, axe_forward_antidiagonal, axe_forward_naive, axe_loss, axe_loss_batch, DpMatrix};
pub use grad::{axe_gradient, LossGradient};
pub use oracle::{brute_force_monotone_maps, brute_force_paths, ORACLE_MAX_LEN};
pub use trace::{axe_align, axe_backtrace, AlignmentTrace, AxeOp, OpCounts, OpKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Naive,
    Antidiagonal,
}

impl std::str::FromStr for Schedule {
    type Err = AxeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Schedule::Naive),
            "antidiagonal" | "anti-diagonal" => Ok(Schedule::Antidiagonal),
            other => Err(config_err("schedule", format!("unknown schedule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxeConfig {
    /// Skip-target penalty coefficient.
    pub delta: f64,
    #[serde(default)]
    pub schedule: Schedule,
}

impl Default for AxeConfig {
    fn default() -> Self {
        AxeConfig {
            delta: 1.0,
            schedule: Schedule::Naive,
        }
    }
}

impl AxeConfig {
    pub fn new(delta: f64, schedule: Schedule) -> Result<Self> {
        let cfg = AxeConfig { delta, schedule };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_delta(delta: f64) -> Result<Self> {
        Self::new(delta, Schedule::Naive)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta.is_finite() || self.delta < 0.0 {
            return Err(config_err("delta", format!("must be finite and >= 0, got {}", self.delta)));
        }
        Ok(())
    }
}

/// Local costs of the three operators for one (Y, P, δ) instance.
#[derive(Clone, Copy)]
pub(crate) struct Costs<'a> {
    y: &'a [usize],
    p: &'a LogProbMatrix,
    delta: f64,
}

impl<'a> Costs<'a> {
    pub(crate) fn new(y: &'a TargetSequence, p: &'a LogProbMatrix, cfg: &AxeConfig) -> Result<Self> {
        cfg.validate()?;
        let v = p.vocab_size();
        for (pos, &id) in y.ids().iter().enumerate() {
            if id >= v {
                return Err(AxeError::TokenOutOfRange { pos: pos + 1, id, size: v });
            }
        }
        if v == 0 {
            return Err(AxeError::Shape("vocabulary has no blank token column".into()));
        }
        Ok(Costs {
            y: y.ids(),
            p,
            delta: cfg.delta,
        })
    }

    pub(crate) fn n(&self) -> usize {
        self.y.len()
    }

    pub(crate) fn m(&self) -> usize {
        self.p.m()
    }

    #[inline]
    pub(crate) fn align(&self, i: usize, j: usize) -> f64 {
        -self.p.get(j - 1, self.y[i - 1])
    }

    #[inline]
    pub(crate) fn skip_prediction(&self, j: usize) -> f64 {
        -self.p.get(j - 1, crate::types::EPSILON_ID)
    }

    /// Cost of skipping target `i` while sitting on prediction `j`; column 0
    /// charges against the first prediction.
    #[inline]
    pub(crate) fn skip_target(&self, i: usize, j: usize) -> f64 {
        let nll = -self.p.get(j.max(1) - 1, self.y[i - 1]);
        if self.delta == 0.0 {
            // 0 * inf would be NaN for a hard zero probability.
            0.0
        } else {
            self.delta * nll
        }
    }

    #[inline]
    pub(crate) fn prediction_of_skip(j: usize) -> usize {
        j.max(1)
    }
}
