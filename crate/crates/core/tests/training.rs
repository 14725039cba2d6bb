use axe::axe::{axe_loss, AxeConfig};
use axe::decode::{decode_all, DecodeConfig};
use axe::metrics::sequence_quality;
use axe::objectives::{LossKind, ObjectiveVariant};
use axe::toy::{generate_task_data, inference_input, train, SyntheticTaskSpec, TaskKind, ToyModel, ToyModelConfig, TrainOptions, TrainingLog};
use axe::types::SourceSequence;

fn small(steps: usize, label_smoothing: f64) -> ToyModelConfig {
    ToyModelConfig { d_model: 32, d_ff: 64, max_len: 24, steps, batch_size: 16, label_smoothing, ..Default::default() }
}

fn opts(loss: LossKind, variant: ObjectiveVariant, lambda: f64, k: usize) -> TrainOptions {
    TrainOptions {
        loss,
        variant,
        decode: DecodeConfig { lambda, num_length_candidates: k, max_len: 24 },
        valid_every: 0,
        normalize: true,
    }
}

fn copy_task() -> SyntheticTaskSpec {
    SyntheticTaskSpec { kind: TaskKind::Copy, ..Default::default() }
}

fn exact_match(model: &ToyModel, task: &SyntheticTaskSpec, cfg: &DecodeConfig) -> f64 {
    let valid = generate_task_data(task, 200, task.seed + 1).unwrap();
    let sources: Vec<SourceSequence> = valid.iter().map(|p| p.0.clone()).collect();
    let refs: Vec<Vec<usize>> = valid.iter().map(|p| p.1.ids().to_vec()).collect();
    let hyps: Vec<Vec<usize>> = decode_all(model, &sources, cfg).unwrap().into_iter().map(|r| r.tokens).collect();
    sequence_quality(&hyps, &refs).unwrap().exact_match
}

/// The window-100 moving average, read every 100 steps, falls monotonically
/// until it first enters the band within 10% of the total drop above its
/// floor, and stays inside that band afterwards.
fn assert_smoothed_descent(log: &TrainingLog) {
    let sm = log.smoothed_loss(100);
    let samples: Vec<f64> = sm.iter().skip(99).step_by(100).copied().collect();
    let first = samples[0];
    let floor = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let band = floor + 0.1 * (first - floor);
    let settle = samples.iter().position(|&s| s <= band).unwrap();
    for w in samples[..=settle].windows(2) {
        assert!(w[1] <= w[0], "smoothed loss rose before settling: {samples:?}");
    }
    assert!(samples[settle..].iter().all(|&s| s <= band), "left the settled band: {samples:?}");
    assert!(floor < 0.25 * first, "{samples:?}");
}

#[test]
fn copy_cross_entropy_learns_and_descends() {
    let task = copy_task();
    let o = opts(LossKind::CrossEntropy, ObjectiveVariant::UnobservedPredictAll, 1.0, 1);
    let (model, log) = train(&task, &small(2000, 0.1), o, 3000, 200).unwrap();
    assert_smoothed_descent(&log);
    let em = exact_match(&model, &task, &o.decode);
    assert!(em >= 0.95, "exact match {em}");
}

#[test]
fn copy_axe_descends() {
    let task = copy_task();
    let o = opts(LossKind::Axe { delta: 3.0 }, ObjectiveVariant::UnobservedPredictAll, 1.0, 1);
    let (_, log) = train(&task, &small(2000, 0.1), o, 3000, 200).unwrap();
    assert_smoothed_descent(&log);
}

#[test]
fn fitted_copy_model_has_near_zero_axe_loss() {
    let task = copy_task();
    let o = opts(LossKind::CrossEntropy, ObjectiveVariant::UnobservedPredictAll, 1.0, 1);
    let (model, _) = train(&task, &small(2000, 0.0), o, 3000, 200).unwrap();
    assert_eq!(exact_match(&model, &task, &o.decode), 1.0, "model does not fit Copy");
    let cfg = AxeConfig::with_delta(3.0).unwrap();
    let (mut total, mut tokens) = (0.0, 0);
    for (x, y) in generate_task_data(&task, 200, task.seed + 1).unwrap() {
        let out = model.forward(&x, &inference_input(y.len())).unwrap();
        total += axe_loss(&y, &out.log_probs, &cfg).unwrap();
        tokens += y.len();
    }
    let per_token = total / tokens as f64;
    assert!(per_token <= 1e-3, "axe loss per token {per_token}");
}

#[test]
fn axe_fits_shifted_targets_better_than_cross_entropy() {
    // long enough that the unavoidable cost of the random prefix is small
    // next to the cost of misplacing every copied token
    let task = SyntheticTaskSpec { kind: TaskKind::ShiftedCopy, min_len: 30, max_len: 34, ..Default::default() };
    let cfg = ToyModelConfig { steps: 1000, batch_size: 16, ..Default::default() };
    let run = |loss| {
        let mut o = opts(loss, ObjectiveVariant::UnobservedPredictAll, 1.05, 5);
        o.decode.max_len = cfg.max_len;
        let (_, log) = train(&task, &cfg, o, 3000, 20).unwrap();
        *log.smoothed_loss(100).last().unwrap()
    };
    let axe = run(LossKind::Axe { delta: 3.0 });
    let ce = run(LossKind::CrossEntropy);
    assert!(axe < ce, "axe {axe} ce {ce}");
}

#[test]
fn length_multiplier_scales_raw_lengths() {
    let task = SyntheticTaskSpec { kind: TaskKind::StochasticExpansion, ..Default::default() };
    let o = opts(LossKind::Axe { delta: 3.0 }, ObjectiveVariant::UnobservedPredictAll, 1.05, 1);
    let (model, _) = train(&task, &small(800, 0.1), o, 3000, 50).unwrap();
    let sources: Vec<SourceSequence> = generate_task_data(&task, 200, 7).unwrap().into_iter().map(|p| p.0).collect();
    let plain = decode_all(&model, &sources, &DecodeConfig { lambda: 1.0, num_length_candidates: 1, max_len: 24 }).unwrap();
    let scaled = decode_all(&model, &sources, &DecodeConfig { lambda: 1.05, num_length_candidates: 1, max_len: 24 }).unwrap();
    let mut differing = 0;
    for (p, s) in plain.iter().zip(&scaled) {
        // floor(l * 1.05 + 0.5) in integer arithmetic
        let expected = ((p.raw_length * 105 + 50) / 100).min(24);
        assert_eq!(s.raw_length, expected, "predicted {}", p.raw_length);
        differing += usize::from(s.raw_length != p.raw_length);
    }
    assert!(differing > 0);
    assert!(plain.iter().zip(&scaled).any(|(p, s)| p.raw_length >= 10 && s.raw_length == p.raw_length + 1));
}
