//! Finite-difference checks of the engine gradient and of the toy model's
//! end-to-end parameter gradients.

mod common;

use axe::axe::AxeConfig;
use axe::objectives::{LossKind, ObjectiveVariant};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn engine_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut checked = 0;
    while checked < 20 {
        let inst = random_instance(&mut rng, 4, 4, 6, 3.0);
        let cfg = AxeConfig::with_delta(DELTAS[checked % 4]).unwrap();
        if let Some(err) = engine_gradient_error(&inst.target, &inst.matrix, &cfg, 1e-5) {
            assert!(err < 1e-4, "relative error {err}");
            checked += 1;
        }
    }
}

#[test]
fn toy_model_axe_gradients_match_finite_differences() {
    let e = model_gradient_error(LossKind::Axe { delta: 3.0 }, ObjectiveVariant::UnobservedPredictAll, 0.0);
    assert!(e < 1e-3, "{e}");
}

#[test]
fn toy_model_axe_gradients_with_smoothing_and_override() {
    let e = model_gradient_error(LossKind::Axe { delta: 2.0 }, ObjectiveVariant::PartialPredictMasks, 0.1);
    assert!(e < 1e-3, "{e}");
}

#[test]
fn toy_model_cross_entropy_gradients_match_finite_differences() {
    let e = model_gradient_error(LossKind::CrossEntropy, ObjectiveVariant::PartialPredictAll, 0.1);
    assert!(e < 1e-3, "{e}");
}
