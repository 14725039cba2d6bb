//! Corpus statistics over decoded outputs: repetition, positional
//! confidence, skip-operator rates and output quality.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::axe::OpCounts;
use crate::decode::DecodeResult;
use crate::error::{AxeError, Result};
use crate::types::EPSILON_ID;

/// Adjacent equal pairs over all adjacent pairs, micro-averaged.
pub fn repetition_rate(outputs: &[Vec<usize>]) -> Result<f64> {
    if outputs.is_empty() {
        return Err(AxeError::EmptyCorpus);
    }
    let mut repeats = 0usize;
    let mut pairs = 0usize;
    for seq in outputs {
        for w in seq.windows(2) {
            pairs += 1;
            if w[0] == w[1] {
                repeats += 1;
            }
        }
    }
    Ok(if pairs == 0 { 0.0 } else { repeats as f64 / pairs as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceProfile {
    pub max_offset: usize,
    /// Mean probability at offsets `-max_offset..=max_offset`; `None` when no
    /// token contributed at that offset.
    pub all: Vec<Option<f64>>,
    /// Restricted to references shorter than 10 tokens.
    pub short: Vec<Option<f64>>,
    /// Restricted to references longer than 30 tokens.
    pub long: Vec<Option<f64>>,
}

pub const SHORT_BELOW: usize = 10;
pub const LONG_ABOVE: usize = 30;

impl ConfidenceProfile {
    pub fn offsets(&self) -> Vec<i64> {
        let k = self.max_offset as i64;
        (-k..=k).collect()
    }

    /// Mean of the ±1 values divided by the value at offset 0.
    pub fn neighbor_ratio(profile: &[Option<f64>]) -> Option<f64> {
        let k = profile.len() / 2;
        if k == 0 {
            return None;
        }
        let peak = profile[k]?;
        let left = profile[k - 1]?;
        let right = profile[k + 1]?;
        if peak <= 0.0 {
            return None;
        }
        Some(0.5 * (left + right) / peak)
    }
}

#[derive(Default, Clone)]
struct ProfileAcc {
    sum: Vec<f64>,
    count: Vec<usize>,
}

impl ProfileAcc {
    fn new(width: usize) -> Self {
        ProfileAcc {
            sum: vec![0.0; width],
            count: vec![0; width],
        }
    }

    fn finish(self) -> Vec<Option<f64>> {
        self.sum
            .into_iter()
            .zip(self.count)
            .map(|(s, c)| (c > 0).then(|| s / c as f64))
            .collect()
    }
}

/// For every generated (non-blank) token at raw position `t`, records the
/// probability the decoder assigned to that same token at `t + o`, and
/// averages per offset `o`.
pub fn position_confidence_profile(results: &[DecodeResult], reference_lengths: &[usize], max_offset: usize) -> Result<ConfidenceProfile> {
    if results.len() != reference_lengths.len() {
        return Err(AxeError::Shape("one reference length per decoded output".into()));
    }
    let width = 2 * max_offset + 1;
    let mut all = ProfileAcc::new(width);
    let mut short = ProfileAcc::new(width);
    let mut long = ProfileAcc::new(width);
    for (r, &ref_len) in results.iter().zip(reference_lengths) {
        let m = r.raw_tokens.len() as i64;
        for (t, &tok) in r.raw_tokens.iter().enumerate() {
            if tok == EPSILON_ID {
                continue;
            }
            for (slot, o) in (-(max_offset as i64)..=max_offset as i64).enumerate() {
                let pos = t as i64 + o;
                if pos < 0 || pos >= m {
                    continue;
                }
                let prob = r.log_probs.get(pos as usize, tok).exp();
                for acc in [Some(&mut all), (ref_len < SHORT_BELOW).then_some(&mut short), (ref_len > LONG_ABOVE).then_some(&mut long)]
                    .into_iter()
                    .flatten()
                {
                    acc.sum[slot] += prob;
                    acc.count[slot] += 1;
                }
            }
        }
    }
    Ok(ConfidenceProfile {
        max_offset,
        all: all.finish(),
        short: short.finish(),
        long: long.finish(),
    })
}

/// `(skip_target_rate, skip_prediction_rate)`: skip-target ops per target
/// token and skip-prediction ops per prediction.
pub fn skip_op_rates(counts: &OpCounts) -> (f64, f64) {
    let targets = counts.align + counts.skip_target;
    let predictions = counts.align + counts.skip_prediction;
    let rate = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    (rate(counts.skip_target, targets), rate(counts.skip_prediction, predictions))
}

fn ngram_counts(seq: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut out = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus BLEU (0-100) over 1..4-grams. Unigram precision is unsmoothed;
/// higher orders use add-one smoothing. Brevity penalty `exp(1 - r/c)` when
/// the hypothesis corpus is shorter than the reference corpus.
pub fn corpus_bleu(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(AxeError::Shape(format!("{} outputs vs {} references", hyps.len(), refs.len())));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=4 {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(rf, n);
            for (g, cnt) in &hc {
                matches[n - 1] += (*cnt).min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if c == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_p = (matches[0] as f64 / totals[0] as f64).ln();
    for n in 1..4 {
        log_p += ((matches[n] + 1) as f64 / (totals[n] + 1) as f64).ln();
    }
    let bp = if c < r { 1.0 - r as f64 / c as f64 } else { 0.0 };
    Ok(100.0 * (bp + log_p / 4.0).exp())
}

/// Bag-of-tokens F1 for one pair; two empty sequences score 1.
pub fn token_f1(hyp: &[usize], reference: &[usize]) -> f64 {
    if hyp.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let mut rc: HashMap<usize, usize> = HashMap::new();
    for &t in reference {
        *rc.entry(t).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for &t in hyp {
        if let Some(c) = rc.get_mut(&t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / hyp.len() as f64;
    let r = overlap as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub count: usize,
    pub exact_match: f64,
    /// Mean per-sentence bag-of-tokens F1.
    pub token_f1: f64,
    pub bleu: f64,
}

pub fn sequence_quality(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> Result<Quality> {
    if hyps.len() != refs.len() {
        return Err(AxeError::Shape(format!("{} outputs vs {} references", hyps.len(), refs.len())));
    }
    if hyps.is_empty() {
        return Err(AxeError::EmptyCorpus);
    }
    let n = hyps.len() as f64;
    let exact = hyps.iter().zip(refs).filter(|(h, r)| h == r).count() as f64 / n;
    let f1 = hyps.iter().zip(refs).map(|(h, r)| token_f1(h, r)).sum::<f64>() / n;
    Ok(Quality {
        count: hyps.len(),
        exact_match: exact,
        token_f1: f1,
        bleu: corpus_bleu(hyps, refs)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// Inclusive lower bound on reference length.
    pub lo: usize,
    /// Exclusive upper bound; `None` for the last bucket.
    pub hi: Option<usize>,
    /// `None` when no reference falls in the bucket.
    pub quality: Option<Quality>,
}

impl Bucket {
    pub fn label(&self) -> String {
        match self.hi {
            Some(hi) => format!("[{},{})", self.lo, hi),
            None => format!("[{},inf)", self.lo),
        }
    }
}

pub const DEFAULT_BUCKET_EDGES: [usize; 5] = [10, 20, 30, 40, 50];

/// Quality per reference-length bucket `[0,e1), [e1,e2), ..., [ek,inf)`.
pub fn bucketed_quality(hyps: &[Vec<usize>], refs: &[Vec<usize>], edges: &[usize]) -> Result<Vec<Bucket>> {
    if hyps.len() != refs.len() {
        return Err(AxeError::Shape(format!("{} outputs vs {} references", hyps.len(), refs.len())));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AxeError::Config {
            field: "bucket_edges".into(),
            reason: "must be strictly increasing".into(),
        });
    }
    let mut bounds = vec![0];
    bounds.extend_from_slice(edges);
    let mut out = Vec::with_capacity(bounds.len());
    for (b, &lo) in bounds.iter().enumerate() {
        let hi = bounds.get(b + 1).copied();
        let (h, r): (Vec<Vec<usize>>, Vec<Vec<usize>>) = hyps
            .iter()
            .zip(refs)
            .filter(|(_, r)| r.len() >= lo && hi.is_none_or(|hi| r.len() < hi))
            .map(|(h, r)| (h.clone(), r.clone()))
            .unzip();
        let quality = if h.is_empty() { None } else { Some(sequence_quality(&h, &r)?) };
        out.push(Bucket { lo, hi, quality });
    }
    Ok(out)
}

/// Relative drop in BLEU from the first to the last populated bucket.
pub fn bucket_decay(buckets: &[Bucket]) -> Option<f64> {
    let filled: Vec<f64> = buckets.iter().filter_map(|b| b.quality.map(|q| q.bleu)).collect();
    let (first, last) = (*filled.first()?, *filled.last()?);
    if filled.len() < 2 || first <= 0.0 {
        return None;
    }
    Some((first - last) / first)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub repetition_rate: f64,
    pub position_confidence_profile: ConfidenceProfile,
    pub skip_target_rate: Option<f64>,
    pub skip_prediction_rate: Option<f64>,
    pub quality: Quality,
    pub bucketed_quality: Vec<Bucket>,
}
