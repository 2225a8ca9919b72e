//! Fitting a sail to a color distribution by projected Adam descent.
//!
//! The objective is the weighted nearest-color distance to the histogram's
//! occupied bins plus `lambda_kl` times the KL divergence between the
//! sail's color histogram and a reference histogram. The nearest-color
//! assignment is recomputed every step and held fixed for the gradient.
//! Hard histogram binning has no useful gradient, so the descent direction
//! for the KL term comes from a trilinear soft-binned histogram of the
//! decoded colors; the reported and restart-selection losses use the exact
//! hard-binned KL.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::colorimetry::{
    build_histogram, colors_histogram, patchmax_histogram, ColorHistogram, HistogramError, DEFAULT_PATCH,
};
use crate::metrics::{kl_against, loss_from_colors, nearest_index, smoothed_reference, FitLoss, MetricError};
use crate::optim::{kmeans, Adam};
use crate::raster::Raster;
use crate::sail::{cross, dist2, dot, sub, ColorSail, Decoder, Rgb, SailError, PARAM_COUNT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("histogram has no occupied bins")]
    EmptySupport,
    #[error("every restart produced a non-finite loss")]
    NonFinite,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sail(#[from] SailError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Histogram(#[from] HistogramError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub subdivision: u32,
    /// Subdivision levels tried by [`sweep_subdivision`]; empty means
    /// `[subdivision]`.
    pub sweep: Vec<u32>,
    /// Complexity weight per unit of `s` in sweep selection.
    pub complexity_weight: f64,
    pub lambda_kl: f64,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub restarts: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Stop when the relative loss change over `patience` iterations falls
    /// below this.
    pub tolerance: f64,
    pub patience: usize,
    pub bins: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            subdivision: 5,
            sweep: Vec::new(),
            complexity_weight: 0.0,
            lambda_kl: crate::metrics::DEFAULT_LAMBDA_KL,
            learning_rate: 1e-3,
            max_iterations: 2000,
            restarts: 5,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            tolerance: 1e-6,
            patience: 50,
            bins: crate::colorimetry::DEFAULT_BINS,
            seed: 0x5A11,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |what: &str| Err(FitError::InvalidConfig(what.to_string()));
        if self.subdivision < 2 || self.sweep.iter().any(|&s| s < 2) {
            return bad("subdivision must be >= 2");
        }
        if !(self.learning_rate > 0.0) || !(self.tolerance > 0.0) || !(self.adam_epsilon > 0.0) {
            return bad("rates and tolerances must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam moments must lie in [0, 1)");
        }
        if self.restarts == 0 {
            return bad("restarts must be >= 1");
        }
        if self.patience == 0 || self.bins < 1 {
            return bad("patience and bins must be positive");
        }
        if !(self.lambda_kl >= 0.0) || !(self.complexity_weight >= 0.0) {
            return bad("weights must be non-negative");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex_digest(&json)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartStatus {
    Converged,
    MaxIterations,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub restart: usize,
    pub status: RestartStatus,
    pub iterations: usize,
    /// Best objective reached by this restart (infinite when aborted).
    pub best_loss: f64,
    /// Objective sampled every `patience` iterations.
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub sail: ColorSail,
    pub loss: FitLoss,
    pub iterations: usize,
    pub restart: usize,
    pub traces: Vec<RestartTrace>,
    /// Best objective seen after each restart.
    pub best_so_far: Vec<f64>,
}

/// Targets and KL reference for one fit.
#[derive(Debug, Clone)]
pub struct FitProblem {
    targets: Vec<(Rgb, f64)>,
    reference: ColorHistogram,
    support: ColorHistogram,
}

impl FitProblem {
    /// Targets are the occupied bins (mass-weighted bin mean colors); the
    /// same histogram is the KL reference.
    pub fn from_histogram(hist: &ColorHistogram) -> Result<Self, FitError> {
        Self::with_reference(hist, hist)
    }

    /// Pixel histogram as targets, patch-max histogram as KL reference.
    pub fn from_image(image: &Raster, bins: usize) -> Result<Self, FitError> {
        let votes: Vec<(Rgb, f64)> = image.pixels().iter().map(|&c| (c, 1.0)).collect();
        let hist = build_histogram(&votes, bins)?;
        let reference = patchmax_histogram(image, DEFAULT_PATCH, bins)?;
        Self::with_reference(&hist, &reference)
    }

    pub fn with_reference(hist: &ColorHistogram, reference: &ColorHistogram) -> Result<Self, FitError> {
        if hist.support_len() == 0 {
            return Err(FitError::EmptySupport);
        }
        if hist.n() != reference.n() {
            return Err(MetricError::BinMismatch(hist.n(), reference.n()).into());
        }
        let total = hist.total();
        let targets = hist.occupied().into_iter().map(|(c, m)| (c, m / total)).collect();
        Ok(FitProblem { targets, reference: reference.clone(), support: hist.clone() })
    }

    pub fn targets(&self) -> &[(Rgb, f64)] {
        &self.targets
    }

    pub fn reference(&self) -> &ColorHistogram {
        &self.reference
    }

    pub fn histogram(&self) -> &ColorHistogram {
        &self.support
    }
}

/// Loss evaluation with gradients for a fixed subdivision.
pub struct FitObjective<'a> {
    problem: &'a FitProblem,
    decoder: Decoder,
    log_reference: Vec<f64>,
    reference: Vec<f64>,
    lambda_kl: f64,
    n: usize,
}

/// One objective evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Differentiable surrogate: exact E_L2 plus λ times soft-binned KL.
    pub surrogate: f64,
    /// Exact objective: E_L2 plus λ times hard-binned KL.
    pub exact: f64,
    pub grad: [f64; PARAM_COUNT],
    pub assignment: Vec<usize>,
}

impl<'a> FitObjective<'a> {
    pub fn new(problem: &'a FitProblem, subdivision: u32, lambda_kl: f64) -> Self {
        let reference = smoothed_reference(&problem.reference);
        let log_reference = reference.iter().map(|r| r.ln()).collect();
        FitObjective {
            problem,
            decoder: Decoder::new(subdivision, true),
            log_reference,
            reference,
            lambda_kl,
            n: problem.reference.n(),
        }
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn assign(&self, colors: &[Rgb]) -> Vec<usize> {
        self.problem.targets.iter().map(|(t, _)| nearest_index(*t, colors)).collect()
    }

    pub fn evaluate(&self, sail: &ColorSail) -> Evaluation {
        let colors = self.decoder.decode_colors(sail, false);
        let assignment = self.assign(&colors);
        self.evaluate_with(sail, &colors, assignment)
    }

    /// Evaluates with a caller-supplied (frozen) assignment.
    pub fn evaluate_assigned(&self, sail: &ColorSail, assignment: &[usize]) -> Evaluation {
        let colors = self.decoder.decode_colors(sail, false);
        self.evaluate_with(sail, &colors, assignment.to_vec())
    }

    fn evaluate_with(&self, sail: &ColorSail, colors: &[Rgb], assignment: Vec<usize>) -> Evaluation {
        let mut color_grads = vec![[0.0; 3]; colors.len()];
        let mut l2 = 0.0;
        for (&(t, m), &j) in self.problem.targets.iter().zip(&assignment) {
            let c = colors[j];
            let d = dist2(t, c).sqrt();
            l2 += m * d;
            if d > 1e-12 {
                for ch in 0..3 {
                    color_grads[j][ch] -= m * (t[ch] - c[ch]) / d;
                }
            }
        }
        let hard_kl = if self.lambda_kl > 0.0 { self.hard_kl(colors) } else { 0.0 };
        let soft_kl = if self.lambda_kl > 0.0 {
            self.soft_kl_backward(colors, &mut color_grads)
        } else {
            0.0
        };
        let grad = self.decoder.backprop(sail, &color_grads);
        Evaluation {
            surrogate: l2 + self.lambda_kl * soft_kl,
            exact: l2 + self.lambda_kl * hard_kl,
            grad,
            assignment,
        }
    }

    fn hard_kl(&self, colors: &[Rgb]) -> f64 {
        match colors_histogram(colors, self.n) {
            Ok(h) => kl_against(h.masses(), h.total(), &self.reference),
            Err(_) => f64::NAN,
        }
    }

    /// Soft KL with trilinear splatting; accumulates `λ dKL/dc` into `grads`.
    fn soft_kl_backward(&self, colors: &[Rgb], grads: &mut [Rgb]) -> f64 {
        let n = self.n;
        if n < 2 {
            return self.hard_kl(colors);
        }
        let inv = 1.0 / colors.len() as f64;
        let splats: Vec<Splat> = colors.iter().map(|c| Splat::new(*c, n)).collect();
        let mut soft = vec![0.0; n * n * n];
        for s in &splats {
            for (b, w) in s.corners(n) {
                soft[b] += inv * w;
            }
        }
        let mut kl = 0.0;
        let mut dkl = vec![0.0; soft.len()];
        for (b, &h) in soft.iter().enumerate() {
            if h > 0.0 {
                let lr = h.ln() - self.log_reference[b];
                kl += h * lr;
                dkl[b] = lr + 1.0;
            }
        }
        for (s, g) in splats.iter().zip(grads.iter_mut()) {
            let d = s.backward(n, &dkl);
            for ch in 0..3 {
                g[ch] += self.lambda_kl * inv * d[ch];
            }
        }
        kl
    }
}

/// Trilinear splat of one color over bin centers.
struct Splat {
    lo: [usize; 3],
    frac: [f64; 3],
    /// d frac / d channel (0 when clamped).
    slope: [f64; 3],
}

impl Splat {
    fn new(c: Rgb, n: usize) -> Self {
        let mut lo = [0; 3];
        let mut frac = [0.0; 3];
        let mut slope = [0.0; 3];
        for ch in 0..3 {
            let t = c[ch] * n as f64 - 0.5;
            let l = (t.floor().max(0.0) as usize).min(n - 2);
            let f = t - l as f64;
            lo[ch] = l;
            if f <= 0.0 {
                frac[ch] = 0.0;
            } else if f >= 1.0 {
                frac[ch] = 1.0;
            } else {
                frac[ch] = f;
                slope[ch] = n as f64;
            }
        }
        Splat { lo, frac, slope }
    }

    fn weight(&self, ch: usize, hi: usize) -> f64 {
        if hi == 1 {
            self.frac[ch]
        } else {
            1.0 - self.frac[ch]
        }
    }

    fn corners(&self, n: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..8).map(move |corner| {
            let bits = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
            let b = ((self.lo[0] + bits[0]) * n + self.lo[1] + bits[1]) * n + self.lo[2] + bits[2];
            let w = self.weight(0, bits[0]) * self.weight(1, bits[1]) * self.weight(2, bits[2]);
            (b, w)
        })
    }

    fn backward(&self, n: usize, dkl: &[f64]) -> Rgb {
        let mut out = [0.0; 3];
        for corner in 0..8 {
            let bits = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
            let b = ((self.lo[0] + bits[0]) * n + self.lo[1] + bits[1]) * n + self.lo[2] + bits[2];
            let g = dkl[b];
            if g == 0.0 {
                continue;
            }
            let w = [self.weight(0, bits[0]), self.weight(1, bits[1]), self.weight(2, bits[2])];
            for ch in 0..3 {
                if self.slope[ch] == 0.0 {
                    continue;
                }
                let dw = if bits[ch] == 1 { self.slope[ch] } else { -self.slope[ch] };
                let others: f64 = (0..3).filter(|&o| o != ch).map(|o| w[o]).product();
                out[ch] += g * dw * others;
            }
        }
        out
    }
}

/// k-means (k = 3) over occupied bins for the vertices; focus at the
/// centroid, no wind. With fewer than three occupied bins the missing
/// vertices copy existing ones, shifted by ±1/(2n) per channel.
pub fn init_sail(hist: &ColorHistogram, subdivision: u32, seed: u64) -> Result<ColorSail, FitError> {
    let occupied = hist.occupied();
    if occupied.is_empty() {
        return Err(FitError::EmptySupport);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Rgb> = occupied.iter().map(|o| o.0).collect();
    let weights: Vec<f64> = occupied.iter().map(|o| o.1).collect();
    let clustering = kmeans(&points, &weights, 3, 50, &mut rng);
    let mut vertices = [[0.0; 3]; 3];
    let jitter = 0.5 / hist.n() as f64;
    for k in 0..3 {
        let c = clustering.centers[k];
        let duplicate = clustering.centers[..k].iter().any(|p| p == &c);
        vertices[k] = if duplicate {
            let mut j = c;
            for ch in j.iter_mut() {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                *ch = (*ch + sign * jitter).clamp(0.0, 1.0);
            }
            j
        } else {
            c
        };
    }
    Ok(ColorSail::flat(vertices, subdivision)?)
}

/// Vertices at extreme occupied bins: the one farthest from the mean, the
/// one farthest from it, then the one spanning the largest triangle with
/// both. Focus at the centroid, no wind.
pub fn init_extreme(hist: &ColorHistogram, subdivision: u32) -> Result<ColorSail, FitError> {
    let occupied = hist.occupied();
    if occupied.is_empty() {
        return Err(FitError::EmptySupport);
    }
    let total: f64 = occupied.iter().map(|o| o.1).sum();
    let mut mean = [0.0; 3];
    for (c, m) in &occupied {
        for ch in 0..3 {
            mean[ch] += c[ch] * m / total;
        }
    }
    // first maximum wins ties
    let argmax = |score: &dyn Fn(Rgb) -> f64| {
        let mut best = occupied[0].0;
        let mut best_score = f64::NEG_INFINITY;
        for (c, _) in &occupied {
            let v = score(*c);
            if v > best_score {
                best_score = v;
                best = *c;
            }
        }
        best
    };
    let v0 = argmax(&|c| dist2(c, mean));
    let v1 = argmax(&|c| dist2(c, v0));
    let e1 = sub(v1, v0);
    let v2 = argmax(&|c| {
        let x = cross(e1, sub(c, v0));
        dot(x, x)
    });
    Ok(ColorSail::flat([v0, v1, v2], subdivision)?)
}

/// Fits one sail to a histogram, using it as its own KL reference.
pub fn fit_sail(hist: &ColorHistogram, config: &FitConfig) -> Result<FitResult, FitError> {
    fit_problem(&FitProblem::from_histogram(hist)?, config, None)
}

/// Fits one sail at `config.subdivision`. Restart 0 starts from
/// [`init_extreme`] (or the warm start, when given); restart `r > 0` from
/// [`init_sail`] seeded with `seed + r`.
pub fn fit_problem(
    problem: &FitProblem,
    config: &FitConfig,
    warm_start: Option<&ColorSail>,
) -> Result<FitResult, FitError> {
    config.validate()?;
    let s = config.subdivision;
    let objective = FitObjective::new(problem, s, config.lambda_kl);
    let mut best: Option<(f64, ColorSail, usize, usize)> = None;
    let mut traces = Vec::with_capacity(config.restarts);
    let mut best_so_far = Vec::with_capacity(config.restarts);
    for restart in 0..config.restarts {
        let init = match (restart, warm_start) {
            (0, Some(w)) => w.with_subdivision(s)?,
            (0, None) => init_extreme(problem.histogram(), s)?,
            _ => init_sail(problem.histogram(), s, config.seed.wrapping_add(restart as u64))?,
        };
        let (trace, sail) = descend(&objective, init, config, restart);
        if trace.status != RestartStatus::NonFinite {
            // ties keep the earlier restart
            if best.as_ref().is_none_or(|b| trace.best_loss < b.0) {
                best = Some((trace.best_loss, sail, trace.iterations, restart));
            }
        }
        best_so_far.push(best.as_ref().map_or(f64::INFINITY, |b| b.0));
        traces.push(trace);
    }
    let (_, sail, iterations, restart) = best.ok_or(FitError::NonFinite)?;
    let colors = objective.decoder.decode_colors(&sail, false);
    let loss = loss_from_colors(problem.targets(), &colors, problem.reference(), config.lambda_kl)?;
    Ok(FitResult { sail, loss, iterations, restart, traces, best_so_far })
}

/// Runs `iterations` Adam steps from `start`, returning the best sail seen.
/// Used by the rig fitter for short warm-started refits.
pub(crate) fn descend(
    objective: &FitObjective<'_>,
    start: ColorSail,
    config: &FitConfig,
    restart: usize,
) -> (RestartTrace, ColorSail) {
    let s = start.subdivision();
    let mut adam = Adam::new(PARAM_COUNT, config.learning_rate, config.beta1, config.beta2, config.adam_epsilon);
    let mut sail = start;
    let mut best_loss = f64::INFINITY;
    let mut best_sail = start;
    let mut curve = Vec::new();
    let mut status = RestartStatus::MaxIterations;
    let mut iterations = 0;
    let mut window_start = f64::NAN;
    for it in 0..config.max_iterations {
        let eval = objective.evaluate(&sail);
        iterations = it + 1;
        if !eval.exact.is_finite() || eval.grad.iter().any(|g| !g.is_finite()) {
            status = RestartStatus::NonFinite;
            best_loss = f64::INFINITY;
            break;
        }
        if eval.exact < best_loss {
            best_loss = eval.exact;
            best_sail = sail;
        }
        if it % config.patience == 0 {
            curve.push(eval.exact);
            if it > 0 {
                let rel = (window_start - eval.surrogate).abs() / eval.surrogate.abs().max(1e-12);
                if rel < config.tolerance {
                    status = RestartStatus::Converged;
                    break;
                }
            }
            window_start = eval.surrogate;
        }
        let mut params = sail.params();
        adam.step(&mut params, &eval.grad);
        match ColorSail::from_params_projected(&params, s) {
            Ok(next) => sail = next,
            Err(_) => {
                status = RestartStatus::NonFinite;
                best_loss = f64::INFINITY;
                break;
            }
        }
    }
    if status != RestartStatus::NonFinite && iterations == config.max_iterations {
        // the final step's result has not been scored yet
        let eval = objective.evaluate(&sail);
        if eval.exact < best_loss {
            best_loss = eval.exact;
            best_sail = sail;
        }
    }
    (RestartTrace { restart, status, iterations, best_loss, curve }, best_sail)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub fits: Vec<(u32, FitResult)>,
    pub selected: u32,
}

impl SweepResult {
    pub fn selected_fit(&self) -> &FitResult {
        &self.fits.iter().find(|(s, _)| *s == self.selected).expect("selected s is fitted").1
    }
}

/// Fits every `s` in the sweep set (warm-starting from the previous level)
/// and selects `argmin combined + complexity_weight * s`, ties → smaller `s`.
pub fn sweep_subdivision(problem: &FitProblem, config: &FitConfig) -> Result<SweepResult, FitError> {
    let levels = if config.sweep.is_empty() { vec![config.subdivision] } else { config.sweep.clone() };
    let mut fits: Vec<(u32, FitResult)> = Vec::with_capacity(levels.len());
    for &s in &levels {
        let cfg = FitConfig { subdivision: s, ..config.clone() };
        let warm = fits.last().map(|(_, f)| f.sail);
        let fit = fit_problem(problem, &cfg, warm.as_ref())?;
        fits.push((s, fit));
    }
    let selected = fits
        .iter()
        .map(|(s, f)| (f.loss.combined + config.complexity_weight * *s as f64, *s))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, s)| s)
        .ok_or_else(|| FitError::InvalidConfig("empty sweep set".into()))?;
    Ok(SweepResult { fits, selected })
}
