//! Analytic derivatives against central differences.

use colorsail::colorimetry::build_histogram;
use colorsail::fit::{init_sail, FitObjective, FitProblem};
use colorsail::sail::{decode, decode_jacobian, ColorSail, Rgb, SailError, PARAM_COUNT};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;

pub fn try_params(p: &[f64; PARAM_COUNT], s: u32) -> Result<ColorSail, SailError> {
    let v = |k: usize| [p[3 * k], p[3 * k + 1], p[3 * k + 2]];
    ColorSail::new([v(0), v(1), v(2)], (p[9], p[10]), p[11], s)
}

pub fn from_params(p: &[f64; PARAM_COUNT], s: u32) -> ColorSail {
    try_params(p, s).unwrap()
}

/// A sail strictly inside the feasible set, so that ±H stays feasible.
pub fn interior_sail(rng: &mut ChaCha8Rng) -> ColorSail {
    let s = rng.random_range(2..=8);
    let c = |rng: &mut ChaCha8Rng| [0, 1, 2].map(|_| rng.random_range(0.05..0.95));
    let pu: f64 = rng.random_range(0.05..0.9);
    let pv = rng.random_range(0.05..(0.95 - pu).max(0.06));
    ColorSail::new([c(rng), c(rng), c(rng)], (pu, pv), rng.random_range(-0.95..0.95), s).unwrap()
}

fn central_difference(sail: &ColorSail, k: usize) -> Vec<Rgb> {
    let s = sail.subdivision();
    let mut plus = sail.params();
    let mut minus = sail.params();
    plus[k] += H;
    minus[k] -= H;
    let a = decode(&from_params(&plus, s), true, false).colors;
    let b = decode(&from_params(&minus, s), true, false).colors;
    a.iter().zip(&b).map(|(x, y)| [0, 1, 2].map(|c| (x[c] - y[c]) / (2.0 * H))).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Worst elementwise relative error of the decode Jacobian over `count`
/// random interior sails.
pub fn jacobian_worst_error(seed: u64, count: usize) -> f64 {
    let mut rng = super::rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let sail = interior_sail(&mut rng);
        let jac = decode_jacobian(&sail);
        for k in 0..PARAM_COUNT {
            let fd = central_difference(&sail, k);
            for (j, f) in jac.iter().zip(&fd) {
                for c in 0..3 {
                    worst = worst.max(rel_err(j[c][k], f[c]));
                }
            }
        }
    }
    worst
}

/// Norm-relative error of the fitting-loss gradient at an initial sail,
/// one entry per trial whose ±H neighbours are all feasible.
pub fn loss_gradient_errors(seed: u64, trials: u64) -> Vec<f64> {
    let mut rng = super::rng(seed);
    let mut errors = Vec::new();
    for trial in 0..trials {
        let truth = super::ground_truth_sail(&mut rng, 5, 0.5);
        let img = super::render_patch(&mut rng, &truth, 16, 16, 2.0 / 255.0);
        let votes: Vec<_> = img.pixels().iter().map(|&c| (c, 1.0)).collect();
        let hist = build_histogram(&votes, 10).unwrap();
        let problem = FitProblem::from_histogram(&hist).unwrap();
        let objective = FitObjective::new(&problem, 5, 1e-4);
        let mut init = init_sail(&hist, 5, trial).unwrap();
        // move off the flat start so the wind and focus terms are exercised
        init = init.with_wind(0.3).unwrap().with_focus((0.3, 0.35)).unwrap();
        let eval = objective.evaluate(&init);
        let mut fd = [0.0; PARAM_COUNT];
        let mut feasible = true;
        for (k, slot) in fd.iter_mut().enumerate() {
            let mut plus = init.params();
            let mut minus = init.params();
            plus[k] += H;
            minus[k] -= H;
            let (Ok(a), Ok(b)) = (try_params(&plus, 5), try_params(&minus, 5)) else {
                feasible = false;
                break;
            };
            let fa = objective.evaluate_assigned(&a, &eval.assignment).surrogate;
            let fb = objective.evaluate_assigned(&b, &eval.assignment).surrogate;
            *slot = (fa - fb) / (2.0 * H);
        }
        if !feasible {
            continue;
        }
        let diff: f64 = eval.grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        errors.push(diff / norm);
    }
    errors
}
