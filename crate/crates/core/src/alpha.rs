//! Soft decomposition of an image into alpha masks, one sail per mask.
//!
//! Free per-pixel logits are optimized jointly with the sails against the
//! alpha-blended nearest-color reconstruction plus total variation of the
//! alphas. Every `steps_per_epoch` steps each sail is refit to the soft
//! histogram of its mask; an epoch is kept only if it does not raise the
//! objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorimetry::{build_histogram, srgb_to_lab, HistogramError};
use crate::fit::{descend, fit_problem, FitConfig, FitError, FitObjective, FitProblem};
use crate::metrics::nearest_index;
use crate::optim::{kmeans, Adam};
use crate::raster::{resize_plane_bilinear, Raster};
use crate::sail::{ColorSail, Decoder, Rgb, PARAM_COUNT};

pub const DEFAULT_TAU: f64 = 1.0 / 3.0;
pub const DEFAULT_TV_WEIGHT: f64 = 1e-3;
pub const DEFAULT_PENALTY: f64 = 100.0;
pub const MAX_ALPHAS: usize = 8;
/// Histogram resolution for the per-mask sail targets. Finer than the
/// fitting default so that compact regions keep distinct bin means.
pub const DEFAULT_RIG_BINS: usize = 32;

#[derive(Debug, Error)]
pub enum RigError {
    #[error("number of alpha masks must be in 1..={MAX_ALPHAS}, got {0}")]
    BadAlphaCount(usize),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    Dimensions { expected: (usize, usize), got: (usize, usize) },
    #[error("{masks} masks but {sails} sails")]
    CountMismatch { masks: usize, sails: usize },
    #[error("logit vector has {got} entries, expected {expected}")]
    LogitLength { expected: usize, got: usize },
    #[error("no candidate mask counts given")]
    NoCandidates,
    #[error("objective became non-finite")]
    NonFinite,
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Histogram(#[from] HistogramError),
}

/// `softmax(z / tau)` with max subtraction.
pub fn tempered_softmax(z: &[f64], tau: f64) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    softmax_into(z, tau, &mut out);
    out
}

fn softmax_into(z: &[f64], tau: f64, out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = ((v - max) / tau).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Alpha values stored pixel-major: `values[p * count + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMasks {
    width: usize,
    height: usize,
    count: usize,
    values: Vec<f64>,
}

impl AlphaMasks {
    pub fn new(width: usize, height: usize, count: usize, values: Vec<f64>) -> Result<Self, RigError> {
        if values.len() != width * height * count {
            return Err(RigError::LogitLength { expected: width * height * count, got: values.len() });
        }
        Ok(AlphaMasks { width, height, count, values })
    }

    /// Builds from one plane per mask (row-major, `width * height` each).
    pub fn from_planes(width: usize, height: usize, planes: &[Vec<f64>]) -> Result<Self, RigError> {
        let count = planes.len();
        let p = width * height;
        if let Some(bad) = planes.iter().find(|pl| pl.len() != p) {
            return Err(RigError::LogitLength { expected: p, got: bad.len() });
        }
        let mut values = vec![0.0; p * count];
        for (i, plane) in planes.iter().enumerate() {
            for (px, &a) in plane.iter().enumerate() {
                values[px * count + i] = a;
            }
        }
        Ok(AlphaMasks { width, height, count, values })
    }

    /// Hard masks from per-pixel labels.
    pub fn one_hot(width: usize, height: usize, count: usize, labels: &[usize]) -> Self {
        let mut values = vec![0.0; width * height * count];
        for (p, &l) in labels.iter().enumerate() {
            values[p * count + l] = 1.0;
        }
        AlphaMasks { width, height, count, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, pixel: usize, mask: usize) -> f64 {
        self.values[pixel * self.count + mask]
    }

    pub fn pixel(&self, pixel: usize) -> &[f64] {
        &self.values[pixel * self.count..(pixel + 1) * self.count]
    }

    pub fn plane(&self, mask: usize) -> Vec<f64> {
        self.values.iter().skip(mask).step_by(self.count).copied().collect()
    }

    /// Rescales each pixel's alphas to sum to one; all-zero pixels become
    /// uniform.
    pub fn normalized(mut self) -> Self {
        let n = self.count;
        for px in self.values.chunks_mut(n) {
            let sum: f64 = px.iter().sum();
            if sum > 0.0 {
                px.iter_mut().for_each(|a| *a /= sum);
            } else {
                px.iter_mut().for_each(|a| *a = 1.0 / n as f64);
            }
        }
        self
    }

    /// Bilinear resampling of every plane.
    pub fn resized(&self, width: usize, height: usize) -> AlphaMasks {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let planes: Vec<Vec<f64>> = (0..self.count)
            .map(|i| resize_plane_bilinear(&self.plane(i), self.width, self.height, width, height))
            .collect();
        AlphaMasks::from_planes(width, height, &planes).expect("resized planes have matching sizes")
    }

    /// Per-pixel index of the largest alpha (ties → lowest index).
    pub fn argmax_labels(&self) -> Vec<usize> {
        self.values
            .chunks(self.count)
            .map(|px| {
                let mut best = 0;
                for i in 1..px.len() {
                    if px[i] > px[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

/// Per-pixel logits with a softmax temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaField {
    width: usize,
    height: usize,
    count: usize,
    tau: f64,
    logits: Vec<f64>,
}

impl AlphaField {
    pub fn new(width: usize, height: usize, count: usize, tau: f64, logits: Vec<f64>) -> Result<Self, RigError> {
        if !(tau > 0.0) {
            return Err(RigError::BadTemperature(tau));
        }
        if count == 0 {
            return Err(RigError::BadAlphaCount(count));
        }
        if logits.len() != width * height * count {
            return Err(RigError::LogitLength { expected: width * height * count, got: logits.len() });
        }
        Ok(AlphaField { width, height, count, tau, logits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn masks(&self) -> AlphaMasks {
        let mut values = vec![0.0; self.logits.len()];
        for (z, a) in self.logits.chunks(self.count).zip(values.chunks_mut(self.count)) {
            softmax_into(z, self.tau, a);
        }
        AlphaMasks { width: self.width, height: self.height, count: self.count, values }
    }
}

/// Clamped, expanded decoded colors of each sail.
fn palettes(sails: &[ColorSail]) -> Vec<Vec<Rgb>> {
    sails.iter().map(|s| Decoder::new(s.subdivision(), true).decode_colors(s, true)).collect()
}

/// `Y_R(p) = Σ_i A_i(p) · nearest_{c ∈ C_i}(Y(p))`.
pub fn reconstruct(image: &Raster, masks: &AlphaMasks, sails: &[ColorSail]) -> Result<Raster, RigError> {
    check_dims(image, masks)?;
    if masks.count() != sails.len() {
        return Err(RigError::CountMismatch { masks: masks.count(), sails: sails.len() });
    }
    let pals = palettes(sails);
    let mut out = Vec::with_capacity(image.len());
    for (p, &y) in image.pixels().iter().enumerate() {
        let mut c = [0.0; 3];
        for (i, pal) in pals.iter().enumerate() {
            let a = masks.get(p, i);
            let near = pal[nearest_index(y, pal)];
            for ch in 0..3 {
                c[ch] += a * near[ch];
            }
        }
        out.push(c);
    }
    Ok(Raster::new(image.width(), image.height(), out).expect("same dimensions as input"))
}

fn check_dims(image: &Raster, masks: &AlphaMasks) -> Result<(), RigError> {
    if image.width() != masks.width() || image.height() != masks.height() {
        return Err(RigError::Dimensions {
            expected: (image.width(), image.height()),
            got: (masks.width(), masks.height()),
        });
    }
    Ok(())
}

/// Anisotropic total variation with forward differences (replicated
/// border), averaged over pixels and masks.
pub fn tv_penalty(masks: &AlphaMasks) -> f64 {
    tv_with_grad(masks, None)
}

fn tv_with_grad(masks: &AlphaMasks, mut grad: Option<&mut [f64]>) -> f64 {
    let (w, h, n) = (masks.width, masks.height, masks.count);
    let norm = (w * h * n) as f64;
    let mut sum = 0.0;
    let v = &masks.values;
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            for i in 0..n {
                let a = v[p * n + i];
                if x + 1 < w {
                    let q = p + 1;
                    let d = v[q * n + i] - a;
                    sum += d.abs();
                    if let Some(g) = grad.as_deref_mut() {
                        let s = sign(d) / norm;
                        g[q * n + i] += s;
                        g[p * n + i] -= s;
                    }
                }
                if y + 1 < h {
                    let q = p + w;
                    let d = v[q * n + i] - a;
                    sum += d.abs();
                    if let Some(g) = grad.as_deref_mut() {
                        let s = sign(d) / norm;
                        g[q * n + i] += s;
                        g[p * n + i] -= s;
                    }
                }
            }
        }
    }
    sum / norm
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// How model selection measures reconstruction error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionUnits {
    /// Mean per-pixel RGB Euclidean distance on the 0–255 scale.
    MeanDistance255,
    /// Mean per-pixel squared RGB distance on the 0–255 scale.
    MeanSquared255,
    /// Objective (`[0, 1]` distance plus weighted TV) summed over a
    /// 128×128 reference raster, independent of the working resolution.
    ReferenceSum128,
}

/// Pixel count of the reference raster used by
/// [`SelectionUnits::ReferenceSum128`].
pub const REFERENCE_PIXELS: f64 = 128.0 * 128.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigConfig {
    pub subdivision: u32,
    pub tau: f64,
    pub tv_weight: f64,
    pub logit_learning_rate: f64,
    pub sail_learning_rate: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub refit_iterations: usize,
    pub init_logit: f64,
    pub max_side: usize,
    pub penalty: f64,
    pub selection_units: SelectionUnits,
    pub bins: usize,
    /// Settings for the initial per-mask sail fits.
    pub fit: FitConfig,
    pub seed: u64,
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig {
            subdivision: 6,
            tau: DEFAULT_TAU,
            tv_weight: DEFAULT_TV_WEIGHT,
            logit_learning_rate: 0.02,
            sail_learning_rate: 1e-3,
            epochs: 20,
            steps_per_epoch: 50,
            refit_iterations: 200,
            init_logit: 2.0,
            max_side: 256,
            penalty: DEFAULT_PENALTY,
            selection_units: SelectionUnits::ReferenceSum128,
            bins: DEFAULT_RIG_BINS,
            fit: FitConfig { restarts: 2, max_iterations: 1000, ..FitConfig::default() },
            seed: 0x5A11,
        }
    }
}

impl RigConfig {
    pub fn digest(&self) -> String {
        crate::fit::hex_digest(&serde_json::to_vec(self).expect("config serializes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigLoss {
    /// Mean per-pixel RGB distance, [0, 1] scale.
    pub recon: f64,
    pub tv: f64,
    /// `recon + tv_weight * tv`.
    pub total: f64,
    /// Mean per-pixel squared RGB distance, [0, 1] scale.
    pub recon_squared: f64,
}

impl RigLoss {
    /// Loss in the units used for model selection.
    pub fn selection_loss(&self, units: SelectionUnits, tv_weight: f64) -> f64 {
        match units {
            SelectionUnits::MeanDistance255 => 255.0 * self.recon + tv_weight * self.tv,
            SelectionUnits::MeanSquared255 => 255.0 * 255.0 * self.recon_squared + tv_weight * self.tv,
            SelectionUnits::ReferenceSum128 => REFERENCE_PIXELS * (self.recon + tv_weight * self.tv),
        }
    }
}

/// Result of a rig fit at the working resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct RigFit {
    /// Logits, when the masks were optimized (absent for user masks).
    pub field: Option<AlphaField>,
    pub masks: AlphaMasks,
    pub sails: Vec<ColorSail>,
    pub reconstruction: Raster,
    pub loss: RigLoss,
    /// Objective at the end of each accepted epoch (index 0 = initialization).
    pub epoch_objectives: Vec<f64>,
}

impl RigFit {
    pub fn count(&self) -> usize {
        self.sails.len()
    }
}

pub fn evaluate_rig(image: &Raster, masks: &AlphaMasks, sails: &[ColorSail], tv_weight: f64) -> Result<RigLoss, RigError> {
    let recon = reconstruct(image, masks, sails)?;
    Ok(loss_of(image, &recon, masks, tv_weight))
}

fn loss_of(image: &Raster, recon: &Raster, masks: &AlphaMasks, tv_weight: f64) -> RigLoss {
    let n = image.len() as f64;
    let mut dist = 0.0;
    let mut sq = 0.0;
    for (a, b) in image.pixels().iter().zip(recon.pixels()) {
        let d2 = crate::sail::dist2(*a, *b);
        dist += d2.sqrt();
        sq += d2;
    }
    let tv = tv_penalty(masks);
    RigLoss { recon: dist / n, tv, total: dist / n + tv_weight * tv, recon_squared: sq / n }
}

/// Initial hard labels from k-means over CIELAB pixel colors.
fn initial_labels(image: &Raster, k: usize, seed: u64) -> Vec<usize> {
    let labs: Vec<[f64; 3]> = image
        .pixels()
        .iter()
        .map(|&c| {
            let l = srgb_to_lab(c);
            [l.l, l.a, l.b]
        })
        .collect();
    let weights = vec![1.0; labs.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    kmeans(&labs, &weights, k, 50, &mut rng).labels
}

fn mask_histogram_problem(image: &Raster, masks: &AlphaMasks, i: usize, bins: usize) -> Result<Option<FitProblem>, RigError> {
    let votes: Vec<(Rgb, f64)> = image.pixels().iter().enumerate().map(|(p, &c)| (c, masks.get(p, i))).collect();
    let total: f64 = votes.iter().map(|v| v.1).sum();
    if total < 1e-9 {
        return Ok(None);
    }
    let hist = build_histogram(&votes, bins)?;
    Ok(Some(FitProblem::from_histogram(&hist)?))
}

/// Fits sails to fixed masks (one fresh fit per mask).
fn fit_sails_to_masks(
    image: &Raster,
    masks: &AlphaMasks,
    config: &RigConfig,
    fallback: Option<&[ColorSail]>,
) -> Result<Vec<ColorSail>, RigError> {
    let fit_cfg = FitConfig { subdivision: config.subdivision, bins: config.bins, ..config.fit.clone() };
    let mut sails = Vec::with_capacity(masks.count());
    for i in 0..masks.count() {
        let problem = match mask_histogram_problem(image, masks, i, config.bins)? {
            Some(p) => p,
            None => {
                // empty mask: any sail will do; use the whole image
                let all = AlphaMasks::one_hot(image.width(), image.height(), 1, &vec![0; image.len()]);
                match (fallback, mask_histogram_problem(image, &all, 0, config.bins)?) {
                    (Some(prev), _) => {
                        sails.push(prev[i]);
                        continue;
                    }
                    (None, Some(p)) => p,
                    (None, None) => unreachable!("a nonempty image has positive total weight"),
                }
            }
        };
        let cfg = FitConfig { seed: fit_cfg.seed.wrapping_add(1000 * i as u64), ..fit_cfg.clone() };
        sails.push(fit_problem(&problem, &cfg, None)?.sail);
    }
    Ok(sails)
}

/// Fits sails to user-supplied masks at full resolution (no logit
/// optimization).
pub fn fit_rig_with_masks(image: &Raster, masks: &AlphaMasks, config: &RigConfig) -> Result<RigFit, RigError> {
    check_dims(image, masks)?;
    if masks.count() == 0 || masks.count() > MAX_ALPHAS {
        return Err(RigError::BadAlphaCount(masks.count()));
    }
    let masks = masks.clone().normalized();
    let sails = fit_sails_to_masks(image, &masks, config, None)?;
    let reconstruction = reconstruct(image, &masks, &sails)?;
    let loss = loss_of(image, &reconstruction, &masks, config.tv_weight);
    Ok(RigFit { field: None, masks, sails, reconstruction, loss, epoch_objectives: vec![loss.total] })
}

/// Mutable optimization state of one rig fit.
#[derive(Clone)]
struct RigState {
    logits: Vec<f64>,
    sails: Vec<ColorSail>,
}

struct RigProblem<'a> {
    image: &'a Raster,
    count: usize,
    tau: f64,
    tv_weight: f64,
    decoder: Decoder,
}

struct StepResult {
    objective: f64,
    logit_grad: Vec<f64>,
    sail_grads: Vec<[f64; PARAM_COUNT]>,
}

impl RigProblem<'_> {
    fn masks(&self, logits: &[f64]) -> AlphaMasks {
        AlphaField::new(self.image.width(), self.image.height(), self.count, self.tau, logits.to_vec())
            .expect("logit layout maintained by the optimizer")
            .masks()
    }

    fn objective(&self, state: &RigState) -> f64 {
        let masks = self.masks(&state.logits);
        let recon = reconstruct(self.image, &masks, &state.sails).expect("consistent rig state");
        loss_of(self.image, &recon, &masks, self.tv_weight).total
    }

    /// Objective and gradients; nearest-color assignments are frozen for
    /// this step.
    fn step(&self, state: &RigState) -> StepResult {
        let n = self.count;
        let masks = self.masks(&state.logits);
        let raw: Vec<Vec<Rgb>> = state.sails.iter().map(|s| self.decoder.decode_colors(s, false)).collect();
        let clamped: Vec<Vec<Rgb>> =
            raw.iter().map(|cs| cs.iter().map(|&c| crate::sail::clamp_rgb(c)).collect()).collect();
        let pixels = self.image.pixels();
        let inv_p = 1.0 / pixels.len() as f64;
        let mut grad_a = vec![0.0; masks.values.len()];
        let mut color_grads: Vec<Vec<Rgb>> = clamped.iter().map(|c| vec![[0.0; 3]; c.len()]).collect();
        let mut recon_sum = 0.0;
        let mut nearest = vec![0usize; n];
        for (p, &y) in pixels.iter().enumerate() {
            let alphas = masks.pixel(p);
            let mut yr = [0.0; 3];
            for i in 0..n {
                nearest[i] = nearest_index(y, &clamped[i]);
                let c = clamped[i][nearest[i]];
                for ch in 0..3 {
                    yr[ch] += alphas[i] * c[ch];
                }
            }
            let r = [y[0] - yr[0], y[1] - yr[1], y[2] - yr[2]];
            let d = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            recon_sum += d;
            if d <= 1e-12 {
                continue;
            }
            let u = [r[0] / d * inv_p, r[1] / d * inv_p, r[2] / d * inv_p];
            for i in 0..n {
                let j = nearest[i];
                let c = clamped[i][j];
                grad_a[p * n + i] -= u[0] * c[0] + u[1] * c[1] + u[2] * c[2];
                let raw_c = raw[i][j];
                for ch in 0..3 {
                    if (0.0..=1.0).contains(&raw_c[ch]) {
                        color_grads[i][j][ch] -= alphas[i] * u[ch];
                    }
                }
            }
        }
        let mut tv_grad = vec![0.0; grad_a.len()];
        let tv = tv_with_grad(&masks, Some(&mut tv_grad));
        for (g, t) in grad_a.iter_mut().zip(&tv_grad) {
            *g += self.tv_weight * t;
        }
        // through the tempered softmax
        let mut logit_grad = vec![0.0; grad_a.len()];
        for p in 0..pixels.len() {
            let a = masks.pixel(p);
            let ga = &grad_a[p * n..(p + 1) * n];
            let inner: f64 = a.iter().zip(ga).map(|(x, g)| x * g).sum();
            for k in 0..n {
                logit_grad[p * n + k] = a[k] * (ga[k] - inner) / self.tau;
            }
        }
        let sail_grads = state
            .sails
            .iter()
            .zip(&color_grads)
            .map(|(s, g)| self.decoder.backprop(s, g))
            .collect();
        StepResult { objective: recon_sum * inv_p + self.tv_weight * tv, logit_grad, sail_grads }
    }
}

/// Fits `n_alpha` masks and sails to `image` (downscaled to
/// `config.max_side` first). The result is at the working resolution.
pub fn fit_rig(image: &Raster, n_alpha: usize, config: &RigConfig) -> Result<RigFit, RigError> {
    if n_alpha == 0 || n_alpha > MAX_ALPHAS {
        return Err(RigError::BadAlphaCount(n_alpha));
    }
    if !(config.tau > 0.0) {
        return Err(RigError::BadTemperature(config.tau));
    }
    let work = image.fit_within(config.max_side);
    let (w, h) = (work.width(), work.height());
    let labels = if n_alpha == 1 { vec![0; work.len()] } else { initial_labels(&work, n_alpha, config.seed) };
    let mut logits = vec![0.0; work.len() * n_alpha];
    for (p, &l) in labels.iter().enumerate() {
        logits[p * n_alpha + l] = config.init_logit;
    }
    let problem = RigProblem {
        image: &work,
        count: n_alpha,
        tau: config.tau,
        tv_weight: config.tv_weight,
        decoder: Decoder::new(config.subdivision, true),
    };
    let init_masks = problem.masks(&logits);
    let sails = fit_sails_to_masks(&work, &init_masks, config, None)?;
    let mut state = RigState { logits, sails };
    let mut current = problem.objective(&state);
    if !current.is_finite() {
        return Err(RigError::NonFinite);
    }
    let mut epoch_objectives = vec![current];
    let mut logit_lr = config.logit_learning_rate;
    let refit_cfg = FitConfig {
        subdivision: config.subdivision,
        bins: config.bins,
        max_iterations: config.refit_iterations,
        restarts: 1,
        ..config.fit.clone()
    };
    // when n_alpha == 1 the logits are irrelevant
    let optimize_logits = n_alpha > 1;
    let mut logit_opt = Adam::new(state.logits.len(), logit_lr, 0.9, 0.999, 1e-8);
    let mut sail_opts: Vec<Adam> =
        (0..n_alpha).map(|_| Adam::new(PARAM_COUNT, config.sail_learning_rate, 0.9, 0.999, 1e-8)).collect();

    for _epoch in 0..config.epochs {
        let saved = state.clone();
        let saved_opts = (logit_opt.clone(), sail_opts.clone());
        for _ in 0..config.steps_per_epoch {
            let step = problem.step(&state);
            if !step.objective.is_finite() {
                break;
            }
            if optimize_logits {
                logit_opt.step(&mut state.logits, &step.logit_grad);
            }
            for (i, g) in step.sail_grads.iter().enumerate() {
                let mut params = state.sails[i].params();
                sail_opts[i].step(&mut params, g);
                if let Ok(next) = ColorSail::from_params_projected(&params, config.subdivision) {
                    state.sails[i] = next;
                }
            }
        }
        let after_steps = problem.objective(&state);

        // refit each sail to the soft histogram of its mask
        let masks = problem.masks(&state.logits);
        let mut refit = state.clone();
        for i in 0..n_alpha {
            if let Some(fp) = mask_histogram_problem(&work, &masks, i, config.bins)? {
                let objective = FitObjective::new(&fp, config.subdivision, refit_cfg.lambda_kl);
                let (_, sail) = descend(&objective, refit.sails[i], &refit_cfg, 0);
                refit.sails[i] = sail;
            }
        }
        let after_refit = problem.objective(&refit);
        let (candidate, value) =
            if after_refit <= after_steps { (refit, after_refit) } else { (state.clone(), after_steps) };

        if value.is_finite() && value <= current {
            state = candidate;
            current = value;
            epoch_objectives.push(current);
        } else {
            state = saved;
            logit_opt = saved_opts.0;
            sail_opts = saved_opts.1;
            logit_lr *= 0.5;
            logit_opt.set_learning_rate(logit_lr);
            if logit_lr < config.logit_learning_rate * 1e-3 {
                break;
            }
        }
    }

    let field = AlphaField::new(w, h, n_alpha, config.tau, state.logits)?;
    let masks = field.masks();
    let reconstruction = reconstruct(&work, &masks, &state.sails)?;
    let loss = loss_of(&work, &reconstruction, &masks, config.tv_weight);
    Ok(RigFit { field: Some(field), masks, sails: state.sails, reconstruction, loss, epoch_objectives })
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub n_alpha: usize,
    pub fit: RigFit,
    /// `(candidate, selection loss, score)` per candidate.
    pub scores: Vec<(usize, f64, f64)>,
}

/// Selection score `L + penalty * N` where `L` is the fitted loss in
/// `config.selection_units`.
pub fn selection_score(loss: &RigLoss, n_alpha: usize, config: &RigConfig) -> (f64, f64) {
    let l = loss.selection_loss(config.selection_units, config.tv_weight);
    (l, l + config.penalty * n_alpha as f64)
}

/// Index of the minimal score; ties go to the smaller mask count.
pub fn argmin_score(scores: &[(usize, f64)]) -> Option<usize> {
    scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.1 .0.cmp(&b.1 .0)))
        .map(|(k, _)| k)
}

/// Fits each candidate mask count and keeps the best-scoring one.
pub fn select_n_alpha(image: &Raster, candidates: &[usize], config: &RigConfig) -> Result<Selection, RigError> {
    if candidates.is_empty() {
        return Err(RigError::NoCandidates);
    }
    let mut fits = Vec::with_capacity(candidates.len());
    let mut scores = Vec::with_capacity(candidates.len());
    for &n in candidates {
        let fit = fit_rig(image, n, config)?;
        let (l, score) = selection_score(&fit.loss, n, config);
        scores.push((n, l, score));
        fits.push(fit);
    }
    let k = argmin_score(&scores.iter().map(|s| (s.0, s.2)).collect::<Vec<_>>()).expect("nonempty");
    Ok(Selection { n_alpha: candidates[k], fit: fits.swap_remove(k), scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_examples() {
        assert_eq!(tempered_softmax(&[0.0, 0.0], 0.1), vec![0.5, 0.5]);
        let a = tempered_softmax(&[1.0, 0.0], 1.0 / 3.0);
        let e3 = 3f64.exp();
        assert_abs_diff_eq!(a[0], e3 / (e3 + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(a[0], 0.95257, epsilon = 1e-5);
        assert_abs_diff_eq!(a[1], 0.04743, epsilon = 1e-5);
        let sharp = tempered_softmax(&[0.3, 0.1, 0.2], 1e-3);
        assert!(sharp[0] > 1.0 - 1e-12);
        let huge = tempered_softmax(&[1e6, 0.0], 1.0);
        assert!(huge.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn tv_examples() {
        let left: Vec<usize> = (0..16).map(|p| if p % 4 < 2 { 0 } else { 1 }).collect();
        let masks = AlphaMasks::one_hot(4, 4, 2, &left);
        assert_abs_diff_eq!(tv_penalty(&masks), 0.25, epsilon = 1e-15);
        let swapped = AlphaMasks::one_hot(4, 4, 2, &left.iter().map(|l| 1 - l).collect::<Vec<_>>());
        assert_eq!(tv_penalty(&swapped), tv_penalty(&masks));
        let flat = AlphaMasks::new(3, 2, 2, vec![0.5; 12]).unwrap();
        assert_eq!(tv_penalty(&flat), 0.0);
    }

    #[test]
    fn temperature_must_be_positive() {
        assert!(matches!(AlphaField::new(1, 1, 2, 0.0, vec![0.0; 2]), Err(RigError::BadTemperature(_))));
        assert!(matches!(AlphaField::new(2, 1, 2, 1.0, vec![0.0; 2]), Err(RigError::LogitLength { .. })));
    }

    #[test]
    fn selection_arithmetic() {
        let losses = [(2usize, 500.0), (3, 350.0), (4, 340.0), (5, 338.0)];
        let scores: Vec<(usize, f64)> = losses.iter().map(|&(n, l)| (n, l + DEFAULT_PENALTY * n as f64)).collect();
        assert_eq!(scores.iter().map(|s| s.1).collect::<Vec<_>>(), vec![700.0, 650.0, 740.0, 838.0]);
        assert_eq!(losses[argmin_score(&scores).unwrap()].0, 3);
        let tied = [(3usize, 10.0), (2, 10.0)];
        assert_eq!(tied[argmin_score(&tied).unwrap()].0, 2);
    }

    #[test]
    fn one_hot_halves_reconstruct_exactly() {
        let a = [0.8, 0.2, 0.1];
        let b = [0.1, 0.3, 0.9];
        let img = Raster::from_fn(6, 4, |x, _| if x < 3 { a } else { b });
        let labels: Vec<usize> = (0..24).map(|p| if p % 6 < 3 { 0 } else { 1 }).collect();
        let masks = AlphaMasks::one_hot(6, 4, 2, &labels);
        let sa = ColorSail::flat([a, [0.5, 0.5, 0.5], [0.0, 0.0, 0.0]], 3).unwrap();
        let sb = ColorSail::flat([[1.0, 1.0, 1.0], b, [0.0, 0.0, 0.0]], 3).unwrap();
        let r = reconstruct(&img, &masks, &[sa, sb]).unwrap();
        assert_eq!(r, img);
        assert!(matches!(reconstruct(&img, &masks, &[sa]), Err(RigError::CountMismatch { .. })));
    }

    #[test]
    fn masks_resize_keeps_partition_of_unity() {
        let field = AlphaField::new(5, 4, 3, DEFAULT_TAU, (0..60).map(|i| ((i * 37) % 11) as f64 / 5.0).collect()).unwrap();
        let up = field.masks().resized(13, 9);
        for p in 0..up.width() * up.height() {
            let s: f64 = up.pixel(p).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
