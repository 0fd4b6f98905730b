//! Analytic gradients of the reference encoder against central finite
//! differences.

use offense_core::encoder::{build_named, TINY_REFERENCE};
use offense_core::Encoder64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;
const MAX_REL_ERR: f64 = 1e-3;

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-10 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

fn batch(model: &Encoder64) -> Vec<(Vec<u32>, usize)> {
    ["you are a total idiot", "have a lovely day friend", "what the hell is this"]
        .iter()
        .zip([1, 0, 1])
        .map(|(t, y)| (model.tokenize(t, 128).unwrap(), y))
        .collect()
}

/// Indices of parameters that receive a non-zero gradient from `batch`,
/// drawn uniformly; pure sampling over all ~160k parameters would mostly hit
/// unused embedding rows.
fn sample_indices(grad: &[f64], count: usize, seed: u64) -> Vec<usize> {
    let live: Vec<usize> = (0..grad.len()).filter(|&i| grad[i] != 0.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| live[rng.random_range(0..live.len())]).collect()
}

#[test]
fn classification_gradient_matches_finite_differences() {
    let mut model: Encoder64 = build_named(TINY_REFERENCE, 21).unwrap();
    // Larger weights than the N(0, 0.02) init so every path carries signal.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in model.parameters_mut() {
        *p += rng.random_range(-0.2..0.2);
    }
    let batch = batch(&model);
    let mut grad = vec![0.0; model.num_parameters()];
    model.classification_loss(&batch, Some(&mut grad)).unwrap();

    let mut worst: f64 = 0.0;
    for i in sample_indices(&grad, 20, 99) {
        let orig = model.parameters()[i];
        model.parameters_mut()[i] = orig + STEP;
        let up = model.classification_loss(&batch, None).unwrap();
        model.parameters_mut()[i] = orig - STEP;
        let down = model.classification_loss(&batch, None).unwrap();
        model.parameters_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let err = rel_err(grad[i], numeric);
        worst = worst.max(err);
        assert!(err < MAX_REL_ERR, "param {i}: analytic {} numeric {numeric} rel {err}", grad[i]);
    }
    eprintln!("worst relative error {worst:.2e}");
}
