//! Losses and evaluation metrics over color sets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorimetry::{colors_histogram, srgb_to_lab, ColorHistogram, HistogramError, LabColor};
use crate::sail::{dist2, ColorSail, Decoder, Rgb};

/// Weight of the KL term in the combined fitting loss.
pub const DEFAULT_LAMBDA_KL: f64 = 1e-4;
/// CIELAB threshold for a "well approximated" pixel.
pub const DEFAULT_DELTA: f64 = 10.0;
/// Additive smoothing of the image histogram before taking logs.
pub const KL_EPSILON: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("palette is empty")]
    EmptyPalette,
    #[error("target set is empty or has zero total weight")]
    EmptyTargets,
    #[error("histogram resolutions differ: {0} vs {1}")]
    BinMismatch(usize, usize),
    #[error(transparent)]
    Histogram(#[from] HistogramError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitLoss {
    pub e_l2: f64,
    pub e_kl: f64,
    pub r_percent: f64,
    pub lambda_kl: f64,
    pub combined: f64,
}

fn check(targets: &[(Rgb, f64)], palette: &[Rgb]) -> Result<f64, MetricError> {
    if palette.is_empty() {
        return Err(MetricError::EmptyPalette);
    }
    let total: f64 = targets.iter().map(|t| t.1).sum();
    if targets.is_empty() || total <= 0.0 {
        return Err(MetricError::EmptyTargets);
    }
    Ok(total)
}

/// Index of the nearest palette color (ties → lowest index).
pub fn nearest_index(c: Rgb, palette: &[Rgb]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, p) in palette.iter().enumerate() {
        let d = dist2(c, *p);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Weighted mean over targets of the Euclidean RGB distance to the nearest
/// palette color.
pub fn e_l2(targets: &[(Rgb, f64)], palette: &[Rgb]) -> Result<f64, MetricError> {
    let total = check(targets, palette)?;
    let sum: f64 = targets
        .iter()
        .map(|&(c, w)| {
            let j = nearest_index(c, palette);
            w * dist2(c, palette[j]).sqrt()
        })
        .sum();
    Ok(sum / total)
}

/// Weighted fraction of targets whose nearest palette color in CIELAB lies
/// strictly within `delta`.
pub fn r_percent(targets: &[(Rgb, f64)], palette: &[Rgb], delta: f64) -> Result<f64, MetricError> {
    let total = check(targets, palette)?;
    let labs: Vec<LabColor> = palette.iter().map(|&c| srgb_to_lab(c)).collect();
    let hit: f64 = targets
        .iter()
        .filter(|(c, _)| {
            let lab = srgb_to_lab(*c);
            labs.iter().map(|p| lab.distance(p)).fold(f64::INFINITY, f64::min) < delta
        })
        .map(|t| t.1)
        .sum();
    Ok(hit / total)
}

pub fn e_percent(targets: &[(Rgb, f64)], palette: &[Rgb], delta: f64) -> Result<f64, MetricError> {
    Ok(1.0 - r_percent(targets, palette, delta)?)
}

/// ε-smoothed, renormalized masses of a reference histogram.
pub(crate) fn smoothed_reference(image_hist: &ColorHistogram) -> Vec<f64> {
    let total: f64 = image_hist.total() + KL_EPSILON * image_hist.masses().len() as f64;
    image_hist.masses().iter().map(|m| (m + KL_EPSILON) / total).collect()
}

/// `KL(H_S || H_Y)` with natural log, summed over the support of `H_S`.
pub fn e_kl(sail_hist: &ColorHistogram, image_hist: &ColorHistogram) -> Result<f64, MetricError> {
    if sail_hist.n() != image_hist.n() {
        return Err(MetricError::BinMismatch(sail_hist.n(), image_hist.n()));
    }
    let reference = smoothed_reference(image_hist);
    let s_total = sail_hist.total();
    Ok(kl_against(sail_hist.masses(), s_total, &reference))
}

pub(crate) fn kl_against(masses: &[f64], total: f64, reference: &[f64]) -> f64 {
    masses
        .iter()
        .zip(reference)
        .filter(|(m, _)| **m > 0.0)
        .map(|(&m, &r)| {
            let p = m / total;
            p * (p / r).ln()
        })
        .sum()
}

/// Decodes the expanded, unclamped sail and evaluates every loss term.
pub fn combined_loss(
    targets: &[(Rgb, f64)],
    sail: &ColorSail,
    image_hist: &ColorHistogram,
    lambda_kl: f64,
) -> Result<FitLoss, MetricError> {
    let colors = Decoder::new(sail.subdivision(), true).decode_colors(sail, false);
    loss_from_colors(targets, &colors, image_hist, lambda_kl)
}

pub(crate) fn loss_from_colors(
    targets: &[(Rgb, f64)],
    colors: &[Rgb],
    image_hist: &ColorHistogram,
    lambda_kl: f64,
) -> Result<FitLoss, MetricError> {
    let el2 = e_l2(targets, colors)?;
    let sail_hist = colors_histogram(colors, image_hist.n())?;
    let ekl = e_kl(&sail_hist, image_hist)?;
    let r = r_percent(targets, colors, DEFAULT_DELTA)?;
    Ok(FitLoss { e_l2: el2, e_kl: ekl, r_percent: r, lambda_kl, combined: el2 + lambda_kl * ekl })
}
