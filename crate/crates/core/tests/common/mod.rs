#![allow(dead_code)]

use axe::axe::{axe_gradient, axe_loss, AxeConfig};
use axe::objectives::{sequence_loss, LossKind, LossSettings, ObjectiveVariant};
use axe::toy::{length_loss, ToyModel, ToyModelConfig};
use axe::types::{LogProbMatrix, MaskedInput, SourceSequence, TargetSequence, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DELTAS: [f64; 4] = [0.5, 1.0, 2.0, 5.0];

pub struct RandomInstance {
    pub target: TargetSequence,
    pub matrix: LogProbMatrix,
    pub vocab: Vocabulary,
}

/// Target over plain tokens, rows from logits uniform in `[-spread, spread]`.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize, m: usize, v: usize, spread: f64) -> RandomInstance {
    assert!(v >= 3);
    let vocab = Vocabulary::synthetic(v - 2).unwrap();
    let ids: Vec<usize> = (0..n).map(|_| rng.random_range(2..v)).collect();
    let logits: Vec<f64> = (0..m * v).map(|_| rng.random_range(-spread..spread)).collect();
    RandomInstance {
        target: TargetSequence::new(ids, &vocab).unwrap(),
        matrix: LogProbMatrix::from_logits(m, v, &logits).unwrap(),
        vocab,
    }
}

/// Minimum over every operator sequence from the empty alignment to
/// `(n, m)`, enumerated directly from the operator definitions.
pub fn exhaustive_min(y: &[usize], p: &LogProbMatrix, delta: f64) -> f64 {
    fn walk(y: &[usize], p: &LogProbMatrix, delta: f64, i: usize, j: usize, acc: f64, best: &mut f64) {
        let (n, m) = (y.len(), p.m());
        if i == n && j == m {
            *best = best.min(acc);
            return;
        }
        if i < n && j < m {
            walk(y, p, delta, i + 1, j + 1, acc - p.get(j, y[i]), best);
        }
        if j < m {
            walk(y, p, delta, i, j + 1, acc - p.get(j, 0), best);
        }
        if i < n {
            // a skipped target is charged to the current prediction, or
            // to the first one before any prediction is consumed
            let row = j.max(1) - 1;
            walk(y, p, delta, i + 1, j, acc - delta * p.get(row, y[i]), best);
        }
    }
    let mut best = f64::INFINITY;
    walk(y, p, delta, 0, 0, 0.0, &mut best);
    best
}

/// Position-by-position cross entropy for `m = n`.
pub fn positional_ce(y: &[usize], p: &LogProbMatrix) -> f64 {
    assert_eq!(y.len(), p.m());
    y.iter().enumerate().map(|(i, &t)| -p.get(i, t)).sum()
}

/// Every non-decreasing map from `n` targets into `1..=m`.
pub fn monotone_maps(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(n);
    fn rec(n: usize, m: usize, lo: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for a in lo..=m {
            cur.push(a);
            rec(n, m, a, cur, out);
            cur.pop();
        }
    }
    rec(n, m, 1, &mut cur, &mut out);
    out
}

pub fn shifted_prediction_instance() -> axe::io::Instance {
    axe::io::parse_instance(include_str!("../data/shifted_prediction.inst")).unwrap()
}

pub fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-6)
}

/// Largest relative error between the engine gradient and central
/// differences over every entry of `p`, or `None` when the optimum is not
/// unique to within 1e-3.
pub fn engine_gradient_error(y: &TargetSequence, p: &LogProbMatrix, cfg: &AxeConfig, h: f64) -> Option<f64> {
    let (_, g, trace) = axe_gradient(y, p, cfg).unwrap();
    if !trace.is_unique(1e-3) {
        return None;
    }
    let mut worst: f64 = 0.0;
    for j in 0..p.m() {
        for t in 0..p.vocab_size() {
            let shifted = |d: f64| {
                let mut q = p.clone();
                q.set(j, t, p.get(j, t) + d);
                axe_loss(y, &q, cfg).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            worst = worst.max(rel_err(g.get(j + 1, t), fd));
        }
    }
    Some(worst)
}

const LENGTH_WEIGHT: f64 = 0.1;

fn end_to_end(
    model: &ToyModel,
    x: &SourceSequence,
    y: &TargetSequence,
    input: &MaskedInput,
    variant: ObjectiveVariant,
    kind: LossKind,
    settings: &LossSettings,
) -> (f64, Vec<f64>, bool) {
    let out = model.forward(x, input).unwrap();
    let seq = sequence_loss(y, input, &out.log_probs, variant, kind, settings).unwrap();
    let (ll, lg) = length_loss(&out.length_logits, y.len());
    let lg: Vec<f64> = lg.iter().map(|g| g * LENGTH_WEIGHT).collect();
    let mut grads = vec![0.0; model.params.len()];
    model.backward(&out.cache, &seq.grad_logits, &lg, &mut grads).unwrap();
    let unique = match kind {
        LossKind::Axe { delta } => {
            let cfg = AxeConfig::with_delta(delta).unwrap();
            let (_, _, t) = axe_gradient(y, &out.log_probs, &cfg).unwrap();
            t.is_unique(1e-3)
        }
        LossKind::CrossEntropy => true,
    };
    (seq.loss + LENGTH_WEIGHT * ll, grads, unique)
}

/// Largest relative error between backpropagated parameter gradients of
/// a tiny model and central differences of its end-to-end loss, over 50
/// sampled parameters.
pub fn model_gradient_error(kind: LossKind, variant: ObjectiveVariant, label_smoothing: f64) -> f64 {
    let cfg = ToyModelConfig { d_model: 8, d_ff: 12, n_layers: 2, max_len: 6, init_std: 0.5, ..Default::default() };
    let vocab = Vocabulary::synthetic(5).unwrap();
    let mut model = ToyModel::new(&cfg, vocab.size(), 11).unwrap();
    let x = SourceSequence::new(vec![2, 4, 6], &vocab).unwrap();
    let y = TargetSequence::new(vec![3, 2, 5], &vocab).unwrap();
    let input = match variant {
        ObjectiveVariant::UnobservedPredictAll => MaskedInput::all_masked(3),
        _ => MaskedInput::from_flags(&y, vec![false, true, false]).unwrap(),
    };
    let settings = LossSettings { label_smoothing, normalize: true };
    let (_, grads, unique) = end_to_end(&model, &x, &y, &input, variant, kind, &settings);
    assert!(unique, "instance should be away from ties");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = rng.random_range(0..model.params.len());
        let orig = model.params[k];
        model.params[k] = orig + h;
        let lp = end_to_end(&model, &x, &y, &input, variant, kind, &settings).0;
        model.params[k] = orig - h;
        let lm = end_to_end(&model, &x, &y, &input, variant, kind, &settings).0;
        model.params[k] = orig;
        worst = worst.max(rel_err(grads[k], (lp - lm) / (2.0 * h)));
    }
    worst
}
