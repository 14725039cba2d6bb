//! Synthetic source/target generators standing in for translation data.
//!
//! Every task uses the shared vocabulary [`Vocabulary::synthetic`]
//! (`source_vocab_size` plain tokens after the two reserved ids).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::types::{SourceSequence, TargetSequence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// `Y = X`.
    Copy,
    /// `Y` = 0 to 3 random tokens followed by `X`.
    ShiftedCopy,
    /// Each source token maps to one fixed token, followed by a second
    /// fixed token with probability `expansion_prob`.
    StochasticExpansion,
    /// `Y` is either `X` or `X` rotated left by one, with equal odds.
    TwoOrderings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub kind: TaskKind,
    pub source_vocab_size: usize,
    /// Inclusive range of source lengths.
    pub min_len: usize,
    pub max_len: usize,
    pub expansion_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            kind: TaskKind::Copy,
            source_vocab_size: 16,
            min_len: 3,
            max_len: 10,
            expansion_prob: 0.3,
            seed: 1,
        }
    }
}

pub const MAX_SHIFT: usize = 3;

impl SyntheticTaskSpec {
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::synthetic(self.source_vocab_size)
    }

    /// Longest target the task can produce.
    pub fn max_target_len(&self) -> usize {
        match self.kind {
            TaskKind::Copy | TaskKind::TwoOrderings => self.max_len,
            TaskKind::ShiftedCopy => self.max_len + MAX_SHIFT,
            TaskKind::StochasticExpansion => 2 * self.max_len,
        }
    }

    pub fn validate(&self, model_max_len: usize) -> Result<()> {
        if self.source_vocab_size < 2 {
            return Err(config_err("task.source_vocab_size", "must be at least 2"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(config_err("task.min_len", "need 1 <= min_len <= max_len"));
        }
        if self.max_target_len() > model_max_len {
            return Err(config_err(
                "task.max_len",
                format!("targets up to {} exceed model max_len {model_max_len}", self.max_target_len()),
            ));
        }
        if !(0.0..=1.0).contains(&self.expansion_prob) {
            return Err(config_err("task.expansion_prob", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// First and second emission of source token `id` under
    /// `StochasticExpansion`: fixed rotations of the plain-token range.
    pub fn expansion_of(&self, id: usize) -> (usize, usize) {
        let k = self.source_vocab_size;
        let base = id - 2;
        (2 + (base + 1) % k, 2 + (base + 2) % k)
    }
}

/// Target for `x` under the task, drawing any randomness from `rng`.
pub fn target_for<R: Rng + ?Sized>(task: &SyntheticTaskSpec, x: &[usize], rng: &mut R) -> Vec<usize> {
    let k = task.source_vocab_size;
    match task.kind {
        TaskKind::Copy => x.to_vec(),
        TaskKind::ShiftedCopy => {
            let shift = rng.random_range(0..=MAX_SHIFT);
            let mut y: Vec<usize> = (0..shift).map(|_| 2 + rng.random_range(0..k)).collect();
            y.extend_from_slice(x);
            y
        }
        TaskKind::StochasticExpansion => {
            let mut y = Vec::with_capacity(2 * x.len());
            for &t in x {
                let (a, b) = task.expansion_of(t);
                y.push(a);
                if rng.random_bool(task.expansion_prob) {
                    y.push(b);
                }
            }
            y
        }
        TaskKind::TwoOrderings => {
            if rng.random_bool(0.5) {
                x.to_vec()
            } else {
                let mut y = x.to_vec();
                y.rotate_left(1);
                y
            }
        }
    }
}

/// `count` (source, target) pairs, deterministic in `seed`.
pub fn generate_task_data(task: &SyntheticTaskSpec, count: usize, seed: u64) -> Result<Vec<(SourceSequence, TargetSequence)>> {
    let vocab = task.vocabulary()?;
    task.validate(usize::MAX)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = task.source_vocab_size;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rng.random_range(task.min_len..=task.max_len);
        let x: Vec<usize> = (0..len).map(|_| 2 + rng.random_range(0..k)).collect();
        let y = target_for(task, &x, &mut rng);
        out.push((SourceSequence::new(x, &vocab)?, TargetSequence::new(y, &vocab)?));
    }
    Ok(out)
}
