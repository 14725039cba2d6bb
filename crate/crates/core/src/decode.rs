//! Single-pass argmax decoding with length candidates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::toy::{inference_input, ToyModel};
use crate::types::{LogProbMatrix, SourceSequence, EPSILON_ID, MASK_ID};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Length multiplier applied to each predicted length.
    pub lambda: f64,
    /// How many of the most likely lengths to decode.
    pub num_length_candidates: usize,
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            lambda: 1.05,
            num_length_candidates: 5,
            max_len: 64,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 1.0 {
            return Err(config_err("decode.lambda", "must be finite and >= 1"));
        }
        if self.num_length_candidates == 0 || self.num_length_candidates > self.max_len {
            return Err(config_err("decode.num_length_candidates", "must lie in 1..=max_len"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Output with blanks removed.
    pub tokens: Vec<usize>,
    /// Argmax tokens before blank removal.
    pub raw_tokens: Vec<usize>,
    pub raw_length: usize,
    /// Index into `candidate_scores` of the kept candidate.
    pub chosen_length_candidate: usize,
    /// Log-probability of each raw argmax token.
    pub chosen_log_probs: Vec<f64>,
    /// `(length, mean chosen log-probability)` per decoded candidate.
    pub candidate_scores: Vec<(usize, f64)>,
    /// Full distributions of the kept candidate.
    pub log_probs: LogProbMatrix,
}

/// `floor(len * lambda + 0.5)` clamped to `[1, max_len]`.
pub fn scale_length(len: usize, lambda: f64, max_len: usize) -> usize {
    ((len as f64 * lambda + 0.5).floor() as usize).clamp(1, max_len)
}

/// Indices of the `k` largest logits (ties to the smaller index), as 1-based
/// lengths.
pub fn top_lengths(length_logits: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..length_logits.len()).collect();
    idx.sort_by(|&a, &b| length_logits[b].total_cmp(&length_logits[a]).then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| i + 1).collect()
}

/// Argmax over everything except the mask token; ties go to the lower id.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = usize::MAX;
    for (t, &x) in row.iter().enumerate() {
        if t == MASK_ID {
            continue;
        }
        if best == usize::MAX || x > row[best] {
            best = t;
        }
    }
    best
}

pub fn strip_blanks(raw: &[usize]) -> Vec<usize> {
    raw.iter().copied().filter(|&t| t != EPSILON_ID && t != MASK_ID).collect()
}

pub fn decode(model: &ToyModel, x: &SourceSequence, cfg: &DecodeConfig) -> Result<DecodeResult> {
    cfg.validate()?;
    let max_len = cfg.max_len.min(model.cfg.max_len);
    let lengths = top_lengths(&model.length_logits(x)?, cfg.num_length_candidates);
    let mut seen = Vec::new();
    for l in lengths {
        let scaled = scale_length(l, cfg.lambda, max_len);
        if !seen.contains(&scaled) {
            seen.push(scaled);
        }
    }
    let mut best: Option<(usize, Vec<usize>, Vec<f64>, LogProbMatrix)> = None;
    let mut candidate_scores: Vec<(usize, f64)> = Vec::with_capacity(seen.len());
    for (c, &len) in seen.iter().enumerate() {
        let out = model.forward(x, &inference_input(len))?;
        let lp = out.log_probs;
        let raw: Vec<usize> = (0..len).map(|r| argmax_row(lp.row(r))).collect();
        let chosen: Vec<f64> = raw.iter().enumerate().map(|(r, &t)| lp.get(r, t)).collect();
        let score = chosen.iter().sum::<f64>() / len as f64;
        let better = match &best {
            None => true,
            Some((b, ..)) => score > candidate_scores[*b].1,
        };
        candidate_scores.push((len, score));
        if better {
            best = Some((c, raw, chosen, lp));
        }
    }
    let (chosen_length_candidate, raw_tokens, chosen_log_probs, log_probs) = best.expect("at least one candidate");
    Ok(DecodeResult {
        tokens: strip_blanks(&raw_tokens),
        raw_length: raw_tokens.len(),
        raw_tokens,
        chosen_length_candidate,
        chosen_log_probs,
        candidate_scores,
        log_probs,
    })
}

/// Decodes each source independently; output order matches input order.
pub fn decode_all(model: &ToyModel, sources: &[SourceSequence], cfg: &DecodeConfig) -> Result<Vec<DecodeResult>> {
    sources.par_iter().map(|x| decode(model, x, cfg)).collect()
}
