use axe::objectives::{apply_observed_override, draw_input, mask_partial, ObjectiveVariant};
use axe::types::{LogProbMatrix, TargetSequence, Vocabulary, MASK_ID};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn target(n: usize) -> (Vocabulary, TargetSequence) {
    let vocab = Vocabulary::synthetic(6).unwrap();
    let ids = (0..n).map(|i| 2 + i % 6).collect();
    let y = TargetSequence::new(ids, &vocab).unwrap();
    (vocab, y)
}

#[test]
fn masked_count_is_uniform() {
    let n = 10;
    let (_, y) = target(n);
    let draws = 100_000u64;
    let mut hist = vec![0u64; n];
    for seed in 0..draws {
        let d = mask_partial(&y, seed);
        hist[d.num_masked - 1] += 1;
    }
    let expected = draws as f64 / n as f64;
    let stat: f64 = hist.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(stat);
    println!("chi2 {stat:.3} p {p:.4} hist {hist:?}");
    assert!(p > 0.01, "chi2 {stat} p {p}");
}

#[test]
fn each_position_is_masked_equally_often() {
    let n = 8;
    let (_, y) = target(n);
    let draws = 40_000u64;
    let mut per_pos = vec![0u64; n];
    for seed in 0..draws {
        for (i, &obs) in mask_partial(&y, seed).input.observed().iter().enumerate() {
            if !obs {
                per_pos[i] += 1;
            }
        }
    }
    // expected masked fraction per position is E[k]/n = (n+1)/(2n)
    let expected = draws as f64 * (n + 1) as f64 / (2 * n) as f64;
    for c in per_pos {
        assert!((c as f64 - expected).abs() < 0.02 * expected, "{c} vs {expected}");
    }
}

#[test]
fn masking_is_deterministic_in_the_seed() {
    let (_, y) = target(12);
    for seed in 0..50 {
        assert_eq!(mask_partial(&y, seed), mask_partial(&y, seed));
    }
    let distinct: std::collections::HashSet<Vec<bool>> =
        (0..50).map(|s| mask_partial(&y, s).input.observed().to_vec()).collect();
    assert!(distinct.len() > 40);
}

#[test]
fn masked_positions_carry_the_mask_token() {
    let (_, y) = target(9);
    for seed in 0..200 {
        let d = mask_partial(&y, seed);
        assert!(d.num_masked >= 1 && d.num_masked <= 9);
        for ((&id, &obs), &t) in d.input.ids().iter().zip(d.input.observed()).zip(y.ids()) {
            assert_eq!(id, if obs { t } else { MASK_ID });
        }
    }
}

#[test]
fn unobserved_variant_masks_everything() {
    use rand::SeedableRng;
    let (_, y) = target(7);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let input = draw_input(&y, ObjectiveVariant::UnobservedPredictAll, &mut rng);
    assert_eq!(input.num_masked(), 7);
    assert!(input.ids().iter().all(|&t| t == MASK_ID));
}

#[test]
fn override_pins_observed_rows() {
    let (vocab, y) = target(6);
    let p = LogProbMatrix::uniform(6, vocab.size());
    let d = mask_partial(&y, 11);
    let q = apply_observed_override(&p, &d.input).unwrap();
    for (i, &obs) in d.input.observed().iter().enumerate() {
        if obs {
            assert_eq!(q.get(i, y.ids()[i]), 0.0);
            assert!((0..vocab.size()).filter(|&t| t != y.ids()[i]).all(|t| q.get(i, t) == -1e9));
        } else {
            assert_eq!(q.row(i), p.row(i));
        }
    }
}
