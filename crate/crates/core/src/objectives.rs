//! CMLM-style masking and the three AXE training-objective variants.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::axe::{axe_gradient, AxeConfig, LossGradient, OpCounts};
use crate::error::{config_err, AxeError, Result};
use crate::types::{LogProbMatrix, MaskedInput, SourceSequence, TargetSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveVariant {
    /// Every target token masked; loss on every position.
    #[serde(rename = "all-unobserved")]
    UnobservedPredictAll,
    /// Random subset masked; loss on every position.
    #[serde(rename = "all-partial")]
    PartialPredictAll,
    /// Random subset masked; observed positions are free to align in place.
    #[serde(rename = "masks-partial")]
    PartialPredictMasks,
}

impl ObjectiveVariant {
    pub const ALL: [ObjectiveVariant; 3] = [
        ObjectiveVariant::UnobservedPredictAll,
        ObjectiveVariant::PartialPredictAll,
        ObjectiveVariant::PartialPredictMasks,
    ];

    pub fn flag(self) -> &'static str {
        match self {
            ObjectiveVariant::UnobservedPredictAll => "all-unobserved",
            ObjectiveVariant::PartialPredictAll => "all-partial",
            ObjectiveVariant::PartialPredictMasks => "masks-partial",
        }
    }
}

impl std::str::FromStr for ObjectiveVariant {
    type Err = AxeError;
    fn from_str(s: &str) -> Result<Self> {
        ObjectiveVariant::ALL
            .into_iter()
            .find(|v| v.flag() == s)
            .ok_or_else(|| config_err("objective", format!("unknown objective {s:?}")))
    }
}

impl std::fmt::Display for ObjectiveVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.flag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskingDraw {
    pub input: MaskedInput,
    pub num_masked: usize,
}

pub fn mask_all(y: &TargetSequence) -> MaskedInput {
    MaskedInput::all_masked(y.len())
}

/// Draws the number of masked tokens uniformly from `1..=n`, then a uniform
/// subset of that size.
pub fn mask_partial_with<R: Rng + ?Sized>(y: &TargetSequence, rng: &mut R) -> MaskingDraw {
    let n = y.len();
    let k = rng.random_range(1..=n);
    let mut positions: Vec<usize> = (0..n).collect();
    positions.shuffle(rng);
    let mut observed = vec![true; n];
    for &p in &positions[..k] {
        observed[p] = false;
    }
    let input = MaskedInput::from_flags(y, observed).expect("flag count matches target");
    MaskingDraw { input, num_masked: k }
}

pub fn mask_partial(y: &TargetSequence, seed: u64) -> MaskingDraw {
    mask_partial_with(y, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Masking for a variant: all masked for `UnobservedPredictAll`, a partial
/// draw otherwise.
pub fn draw_input<R: Rng + ?Sized>(y: &TargetSequence, variant: ObjectiveVariant, rng: &mut R) -> MaskedInput {
    match variant {
        ObjectiveVariant::UnobservedPredictAll => mask_all(y),
        _ => mask_partial_with(y, rng).input,
    }
}

/// Sets `log P_i(Y_i) = 0` on every observed row, with the sentinel on all
/// other entries of that row.
pub fn apply_observed_override(p: &LogProbMatrix, input: &MaskedInput) -> Result<LogProbMatrix> {
    if p.m() != input.len() {
        return Err(AxeError::Shape(format!(
            "{} prediction rows for an input of length {}",
            p.m(),
            input.len()
        )));
    }
    let mut out = p.clone();
    for (i, (&id, &obs)) in input.ids().iter().zip(input.observed()).enumerate() {
        if obs {
            out.override_row(i, id);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossKind {
    Axe {
        #[serde(default = "default_delta")]
        delta: f64,
    },
    CrossEntropy,
}

pub const DEFAULT_DELTA: f64 = 3.0;

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Axe { delta: DEFAULT_DELTA }
    }
}

impl LossKind {
    pub fn label(&self) -> String {
        match self {
            LossKind::Axe { delta } => format!("axe(delta={delta})"),
            LossKind::CrossEntropy => "ce".to_string(),
        }
    }

    pub fn is_axe(&self) -> bool {
        matches!(self, LossKind::Axe { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSettings {
    /// Smoothing weight spread uniformly over the whole vocabulary,
    /// blank included.
    pub label_smoothing: f64,
    /// Divide the per-sequence loss by the target length.
    pub normalize: bool,
}

impl Default for LossSettings {
    fn default() -> Self {
        LossSettings {
            label_smoothing: 0.0,
            normalize: true,
        }
    }
}

/// Per-sequence loss and its gradient with respect to the logits that
/// produced `logp` (row-major, same shape as `logp`).
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLoss {
    pub loss: f64,
    pub grad_logits: Vec<f64>,
    pub counts: Option<OpCounts>,
}

/// `(1-ls) log P_j(v) + (ls/V) Σ_u log P_j(u)`: the smoothed per-op target
/// term expressed as a pseudo log-probability.
fn smooth(logp: &LogProbMatrix, ls: f64) -> LogProbMatrix {
    if ls == 0.0 {
        return logp.clone();
    }
    let v = logp.vocab_size();
    let mut out = logp.clone();
    for r in 0..logp.m() {
        let mean = logp.row(r).iter().sum::<f64>() / v as f64;
        for t in 0..v {
            out.set(r, t, (1.0 - ls) * logp.get(r, t) + ls * mean);
        }
    }
    out
}

/// Loss of `logp` (the model's output for `input`) against `y`.
pub fn sequence_loss(
    y: &TargetSequence,
    input: &MaskedInput,
    logp: &LogProbMatrix,
    variant: ObjectiveVariant,
    kind: LossKind,
    settings: &LossSettings,
) -> Result<SequenceLoss> {
    let n = y.len();
    let v = logp.vocab_size();
    if logp.m() != n || input.len() != n {
        return Err(AxeError::Shape(format!(
            "training requires m = n, got m={} n={} input={}",
            logp.m(),
            n,
            input.len()
        )));
    }
    let ls = settings.label_smoothing;
    let mut costs = smooth(logp, ls);
    if variant == ObjectiveVariant::PartialPredictMasks {
        costs = apply_observed_override(&costs, input)?;
    }
    let (mut loss, g, counts) = match kind {
        LossKind::Axe { delta } => {
            let cfg = AxeConfig::with_delta(delta)?;
            let (loss, g, trace) = axe_gradient(y, &costs, &cfg)?;
            (loss, g, Some(trace.counts))
        }
        LossKind::CrossEntropy => {
            let mut g = LossGradient::default();
            let mut loss = 0.0;
            for (i, &t) in y.ids().iter().enumerate() {
                loss -= costs.get(i, t);
                g.entries.insert((i + 1, t), -1.0);
            }
            (loss, g, None)
        }
    };
    let scale = if settings.normalize { 1.0 / n as f64 } else { 1.0 };
    loss *= scale;

    let dense = g.to_dense(n, v);
    let mut grad_logits = vec![0.0; n * v];
    for r in 0..n {
        if costs.is_overridden(r) {
            continue;
        }
        let gs = &dense[r * v..(r + 1) * v];
        let total: f64 = gs.iter().sum();
        if total == 0.0 {
            continue;
        }
        // back through the smoothing, then through log-softmax
        let gl: Vec<f64> = gs.iter().map(|x| (1.0 - ls) * x + ls * total / v as f64).collect();
        let gl_total: f64 = gl.iter().sum();
        let out = &mut grad_logits[r * v..(r + 1) * v];
        for t in 0..v {
            out[t] = scale * (gl[t] - logp.get(r, t).exp() * gl_total);
        }
    }
    if !loss.is_finite() {
        return Err(AxeError::NonFinite("sequence loss".into()));
    }
    Ok(SequenceLoss { loss, grad_logits, counts })
}

/// Anything that maps (source, decoder input) to per-position logits.
pub trait LogitModel {
    fn vocab_size(&self) -> usize;
    /// Row-major `input.len() x vocab_size` logits.
    fn logits(&self, x: &SourceSequence, input: &MaskedInput) -> Result<Vec<f64>>;
}

/// Draws the variant's masking from `seed`, runs the model with `m = n`
/// and returns the loss with its logit gradient.
pub fn training_loss<M: LogitModel + ?Sized>(
    y: &TargetSequence,
    x: &SourceSequence,
    model: &M,
    variant: ObjectiveVariant,
    kind: LossKind,
    settings: &LossSettings,
    seed: u64,
) -> Result<(SequenceLoss, MaskedInput)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = draw_input(y, variant, &mut rng);
    let logits = model.logits(x, &input)?;
    let logp = LogProbMatrix::from_logits(y.len(), model.vocab_size(), &logits)?;
    let out = sequence_loss(y, &input, &logp, variant, kind, settings)?;
    Ok((out, input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::axe::axe_loss;
    use crate::types::{Vocabulary, MASK_ID};

    fn vocab() -> Vocabulary {
        Vocabulary::synthetic(6).unwrap()
    }

    #[test]
    fn mask_all_masks_everything() {
        let v = vocab();
        let y = TargetSequence::new(vec![2, 3, 4], &v).unwrap();
        let mi = mask_all(&y);
        assert_eq!(mi.ids(), &[MASK_ID; 3]);
        assert!(mi.observed().iter().all(|o| !o));
        assert_eq!(mi.unmask(&y).unwrap(), y.ids());
    }

    #[test]
    fn partial_mask_on_single_token_masks_it() {
        let v = vocab();
        let y = TargetSequence::new(vec![5], &v).unwrap();
        for seed in 0..20 {
            let d = mask_partial(&y, seed);
            assert_eq!(d.num_masked, 1);
            assert_eq!(d.input.ids(), &[MASK_ID]);
        }
    }

    #[test]
    fn partial_mask_is_deterministic_and_consistent() {
        let v = vocab();
        let y = TargetSequence::new(vec![2, 3, 4, 5, 6, 7, 2], &v).unwrap();
        for seed in 0..50 {
            let a = mask_partial(&y, seed);
            let b = mask_partial(&y, seed);
            assert_eq!(a, b);
            assert_eq!(a.num_masked, a.input.num_masked());
            assert!((1..=7).contains(&a.num_masked));
            for (i, (&id, &obs)) in a.input.ids().iter().zip(a.input.observed()).enumerate() {
                assert_eq!(obs, id != MASK_ID);
                if obs {
                    assert_eq!(id, y.ids()[i]);
                }
            }
        }
    }

    #[test]
    fn override_with_nothing_observed_is_identity() {
        let v = vocab();
        let y = TargetSequence::new(vec![2, 3], &v).unwrap();
        let p = LogProbMatrix::uniform(2, v.size());
        let out = apply_observed_override(&p, &mask_all(&y)).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn override_all_observed_gives_zero_loss() {
        let v = vocab();
        let y = TargetSequence::new(vec![2, 3, 7], &v).unwrap();
        let p = LogProbMatrix::uniform(3, v.size());
        let input = MaskedInput::from_flags(&y, vec![true; 3]).unwrap();
        let out = apply_observed_override(&p, &input).unwrap();
        assert!(out.validate().passed);
        for delta in [1.0, 3.0] {
            assert_eq!(axe_loss(&y, &out, &AxeConfig::with_delta(delta).unwrap()).unwrap(), 0.0);
        }
    }

    #[test]
    fn override_rejects_length_mismatch() {
        let v = vocab();
        let y = TargetSequence::new(vec![2, 3], &v).unwrap();
        let p = LogProbMatrix::uniform(3, v.size());
        assert!(apply_observed_override(&p, &mask_all(&y)).is_err());
    }

    #[test]
    fn variant_flags_parse() {
        for v in ObjectiveVariant::ALL {
            assert_eq!(v.flag().parse::<ObjectiveVariant>().unwrap(), v);
        }
        assert!("bogus".parse::<ObjectiveVariant>().is_err());
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let v = vocab();
        let y = TargetSequence::new(vec![2, 4], &v).unwrap();
        let logits: Vec<f64> = (0..2 * v.size()).map(|k| (k as f64 * 0.37).sin()).collect();
        let logp = LogProbMatrix::from_logits(2, v.size(), &logits).unwrap();
        let s = LossSettings { label_smoothing: 0.0, normalize: false };
        let out = sequence_loss(&y, &mask_all(&y), &logp, ObjectiveVariant::UnobservedPredictAll, LossKind::CrossEntropy, &s)
            .unwrap();
        for r in 0..2 {
            for t in 0..v.size() {
                let onehot = if t == y.ids()[r] { 1.0 } else { 0.0 };
                let expected = logp.get(r, t).exp() - onehot;
                assert!((out.grad_logits[r * v.size() + t] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perfect_model_has_zero_axe_loss() {
        let v = vocab();
        let y = TargetSequence::new(vec![2, 4, 3], &v).unwrap();
        let mut logits = vec![-1e4; 3 * v.size()];
        for (r, &t) in y.ids().iter().enumerate() {
            logits[r * v.size() + t] = 0.0;
        }
        let logp = LogProbMatrix::from_logits(3, v.size(), &logits).unwrap();
        let out = sequence_loss(
            &y,
            &mask_all(&y),
            &logp,
            ObjectiveVariant::UnobservedPredictAll,
            LossKind::Axe { delta: 3.0 },
            &LossSettings::default(),
        )
        .unwrap();
        assert!(out.loss.abs() < 1e-12);
    }
}
