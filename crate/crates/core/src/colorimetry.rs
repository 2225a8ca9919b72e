//! Color-space conversion, soft-vote RGB histograms and image analytics.

use thiserror::Error;

use crate::raster::Raster;
use crate::sail::{DecodedSail, Rgb};

/// Default histogram resolution per axis.
pub const DEFAULT_BINS: usize = 10;
/// Default patch size for the patch-max histogram.
pub const DEFAULT_PATCH: usize = 8;

pub const EASY_ENTROPY_BELOW: f64 = 1.5;
pub const HARD_ENTROPY_ABOVE: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HistogramError {
    #[error("histogram needs at least one bin per axis")]
    ZeroBins,
    #[error("total weight is zero; distribution is empty")]
    EmptyDistribution,
    #[error("negative or non-finite weight {0}")]
    BadWeight(f64),
}

/// CIE L*a*b* (D65, 2° observer).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabColor {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl LabColor {
    pub fn distance(&self, other: &LabColor) -> f64 {
        ((self.l - other.l).powi(2) + (self.a - other.a).powi(2) + (self.b - other.b).powi(2)).sqrt()
    }
}

pub(crate) const WHITE_D65: [f64; 3] = [0.95047, 1.0, 1.08883];
pub(crate) const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

pub(crate) fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    if t > LAB_EPSILON {
        t.cbrt()
    } else {
        (LAB_KAPPA * t + 16.0) / 116.0
    }
}

pub fn srgb_to_lab(rgb: Rgb) -> LabColor {
    let lin = [srgb_to_linear(rgb[0]), srgb_to_linear(rgb[1]), srgb_to_linear(rgb[2])];
    let mut xyz = [0.0; 3];
    for (r, row) in SRGB_TO_XYZ.iter().enumerate() {
        xyz[r] = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    let fx = lab_f(xyz[0] / WHITE_D65[0]);
    let fy = lab_f(xyz[1] / WHITE_D65[1]);
    let fz = lab_f(xyz[2] / WHITE_D65[2]);
    LabColor { l: 116.0 * fy - 16.0, a: 500.0 * (fx - fy), b: 200.0 * (fy - fz) }
}

/// Bin index of one channel: `min(floor(c * n), n - 1)`, with negative
/// values mapped to bin 0.
pub fn channel_bin(c: f64, n: usize) -> usize {
    let raw = (c * n as f64).floor();
    if raw <= 0.0 {
        0
    } else {
        (raw as usize).min(n - 1)
    }
}

/// An `n x n x n` RGB histogram. Besides bin masses it keeps the
/// mass-weighted mean color of each occupied bin, so downstream fitting can
/// target the colors that fell into a bin rather than its geometric center.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorHistogram {
    n: usize,
    masses: Vec<f64>,
    means: Vec<Rgb>,
    normalized: bool,
}

impl ColorHistogram {
    /// Accumulates weighted votes without normalizing.
    pub fn accumulate<I>(pixels: I, n: usize) -> Result<Self, HistogramError>
    where
        I: IntoIterator<Item = (Rgb, f64)>,
    {
        if n == 0 {
            return Err(HistogramError::ZeroBins);
        }
        let bins = n * n * n;
        let mut masses = vec![0.0; bins];
        let mut sums = vec![[0.0; 3]; bins];
        for (c, w) in pixels {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(HistogramError::BadWeight(w));
            }
            if w == 0.0 {
                continue;
            }
            let b = bin_index(c, n);
            masses[b] += w;
            sums[b][0] += w * c[0];
            sums[b][1] += w * c[1];
            sums[b][2] += w * c[2];
        }
        let means = masses
            .iter()
            .zip(&sums)
            .enumerate()
            .map(|(b, (&m, s))| if m > 0.0 { [s[0] / m, s[1] / m, s[2] / m] } else { bin_center(b, n) })
            .collect();
        Ok(ColorHistogram { n, masses, means, normalized: false })
    }

    /// Builds from raw masses; bin means default to bin centers.
    pub fn from_masses(n: usize, masses: Vec<f64>) -> Result<Self, HistogramError> {
        if n == 0 {
            return Err(HistogramError::ZeroBins);
        }
        assert_eq!(masses.len(), n * n * n, "mass vector must have n^3 entries");
        if let Some(&bad) = masses.iter().find(|m| !(**m >= 0.0 && m.is_finite())) {
            return Err(HistogramError::BadWeight(bad));
        }
        let means = (0..masses.len()).map(|b| bin_center(b, n)).collect();
        ColorHistogram { n, masses, means, normalized: false }.normalize()
    }

    pub fn normalize(mut self) -> Result<Self, HistogramError> {
        let total: f64 = self.masses.iter().sum();
        if total <= 0.0 {
            return Err(HistogramError::EmptyDistribution);
        }
        for m in &mut self.masses {
            *m /= total;
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mass(&self, r: usize, g: usize, b: usize) -> f64 {
        self.masses[(r * self.n + g) * self.n + b]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Occupied bins as `(mean color, mass)` pairs in bin order.
    pub fn occupied(&self) -> Vec<(Rgb, f64)> {
        self.masses
            .iter()
            .zip(&self.means)
            .filter(|(m, _)| **m > 0.0)
            .map(|(&m, &c)| (c, m))
            .collect()
    }

    /// Occupied bins as `(bin center, mass)` pairs.
    pub fn occupied_centers(&self) -> Vec<(Rgb, f64)> {
        self.masses
            .iter()
            .enumerate()
            .filter(|(_, m)| **m > 0.0)
            .map(|(b, &m)| (bin_center(b, self.n), m))
            .collect()
    }

    pub fn support_len(&self) -> usize {
        self.masses.iter().filter(|m| **m > 0.0).count()
    }
}

pub fn bin_index(c: Rgb, n: usize) -> usize {
    (channel_bin(c[0], n) * n + channel_bin(c[1], n)) * n + channel_bin(c[2], n)
}

pub fn bin_center(b: usize, n: usize) -> Rgb {
    let r = b / (n * n);
    let g = (b / n) % n;
    let bl = b % n;
    let nf = n as f64;
    [(r as f64 + 0.5) / nf, (g as f64 + 0.5) / nf, (bl as f64 + 0.5) / nf]
}

/// Normalized histogram of weighted pixels (soft votes). Votes are summed
/// in a canonical order, so the result does not depend on pixel order.
pub fn build_histogram(pixels: &[(Rgb, f64)], n: usize) -> Result<ColorHistogram, HistogramError> {
    let mut votes = pixels.to_vec();
    votes.sort_by(|a, b| {
        a.0[0]
            .total_cmp(&b.0[0])
            .then(a.0[1].total_cmp(&b.0[1]))
            .then(a.0[2].total_cmp(&b.0[2]))
            .then(a.1.total_cmp(&b.1))
    });
    ColorHistogram::accumulate(votes, n)?.normalize()
}

/// Histogram of a decoded sail with one equal vote per color.
pub fn sail_histogram(decoded: &DecodedSail, n: usize) -> Result<ColorHistogram, HistogramError> {
    colors_histogram(&decoded.colors, n)
}

pub(crate) fn colors_histogram(colors: &[Rgb], n: usize) -> Result<ColorHistogram, HistogramError> {
    let w = 1.0 / colors.len().max(1) as f64;
    ColorHistogram::accumulate(colors.iter().map(|&c| (c, w)), n)?.normalize()
}

/// Per-bin maximum over the normalized histograms of `patch x patch` tiles
/// (edge tiles may be smaller), renormalized.
pub fn patchmax_histogram(image: &Raster, patch_size: usize, n: usize) -> Result<ColorHistogram, HistogramError> {
    if n == 0 {
        return Err(HistogramError::ZeroBins);
    }
    let patch = patch_size.max(1);
    let overall = ColorHistogram::accumulate(image.pixels().iter().map(|&c| (c, 1.0)), n)?;
    let mut maxima = vec![0.0f64; n * n * n];
    let mut local = vec![0.0f64; n * n * n];
    let mut touched = Vec::new();
    for y0 in (0..image.height()).step_by(patch) {
        for x0 in (0..image.width()).step_by(patch) {
            let y1 = (y0 + patch).min(image.height());
            let x1 = (x0 + patch).min(image.width());
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            touched.clear();
            for y in y0..y1 {
                for x in x0..x1 {
                    let b = bin_index(image.get(x, y), n);
                    if local[b] == 0.0 {
                        touched.push(b);
                    }
                    local[b] += 1.0;
                }
            }
            for &b in &touched {
                maxima[b] = maxima[b].max(local[b] / count);
                local[b] = 0.0;
            }
        }
    }
    ColorHistogram { n, masses: maxima, means: overall.means, normalized: false }.normalize()
}

/// Shannon entropy in bits over nonzero bins.
pub fn histogram_entropy(h: &ColorHistogram) -> f64 {
    let total = h.total();
    if total <= 0.0 {
        return 0.0;
    }
    -h.masses()
        .iter()
        .filter(|m| **m > 0.0)
        .map(|&m| {
            let p = m / total;
            p * p.log2()
        })
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Hardness {
    Easy,
    Medium,
    Hard,
}

impl Hardness {
    pub fn from_entropy(bits: f64) -> Self {
        if bits < EASY_ENTROPY_BELOW {
            Hardness::Easy
        } else if bits > HARD_ENTROPY_ABOVE {
            Hardness::Hard
        } else {
            Hardness::Medium
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Hardness::Easy => "easy",
            Hardness::Medium => "medium",
            Hardness::Hard => "hard",
        }
    }
}

/// Hasler–Süsstrunk colorfulness on the 0–255 scale, population statistics.
pub fn colorfulness(image: &Raster) -> f64 {
    let n = image.len() as f64;
    let (mut sum_rg, mut sum_yb) = (0.0, 0.0);
    for p in image.pixels() {
        let (r, g, b) = (p[0] * 255.0, p[1] * 255.0, p[2] * 255.0);
        sum_rg += r - g;
        sum_yb += 0.5 * (r + g) - b;
    }
    let mean_rg = sum_rg / n;
    let mean_yb = sum_yb / n;
    let (mut var_rg, mut var_yb) = (0.0, 0.0);
    for p in image.pixels() {
        let (r, g, b) = (p[0] * 255.0, p[1] * 255.0, p[2] * 255.0);
        var_rg += (r - g - mean_rg).powi(2);
        var_yb += (0.5 * (r + g) - b - mean_yb).powi(2);
    }
    var_rg /= n;
    var_yb /= n;
    (var_rg + var_yb).sqrt() + 0.3 * (mean_rg * mean_rg + mean_yb * mean_yb).sqrt()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::sail::{decode, ColorSail};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Test-only inverse of [`srgb_to_lab`].
    pub(crate) fn lab_to_srgb(lab: LabColor) -> Rgb {
        let fy = (lab.l + 16.0) / 116.0;
        let fx = fy + lab.a / 500.0;
        let fz = fy - lab.b / 200.0;
        let inv = |f: f64| {
            let f3 = f * f * f;
            if f3 > LAB_EPSILON {
                f3
            } else {
                (116.0 * f - 16.0) / LAB_KAPPA
            }
        };
        let xyz = [inv(fx) * WHITE_D65[0], inv(fy) * WHITE_D65[1], inv(fz) * WHITE_D65[2]];
        // inverse of the sRGB matrix
        let m = [
            [3.2404542, -1.5371385, -0.4985314],
            [-0.9692660, 1.8760108, 0.0415560],
            [0.0556434, -0.2040259, 1.0572252],
        ];
        let mut out = [0.0; 3];
        for r in 0..3 {
            let lin = m[r][0] * xyz[0] + m[r][1] * xyz[1] + m[r][2] * xyz[2];
            out[r] = if lin <= 0.0031308 { 12.92 * lin } else { 1.055 * lin.powf(1.0 / 2.4) - 0.055 };
        }
        out
    }

    #[test]
    fn lab_reference_points() {
        let white = srgb_to_lab([1.0, 1.0, 1.0]);
        assert_abs_diff_eq!(white.l, 100.0, epsilon = 1e-5);
        assert!(white.a.abs() < 0.01 && white.b.abs() < 0.01);
        let black = srgb_to_lab([0.0, 0.0, 0.0]);
        assert_eq!((black.l, black.a, black.b), (0.0, 0.0, 0.0));
        let gray = srgb_to_lab([0.5, 0.5, 0.5]);
        assert_abs_diff_eq!(gray.l, 53.39, epsilon = 0.01);
        assert!(gray.a.abs() < 0.01 && gray.b.abs() < 0.01);
    }

    #[test]
    fn histogram_examples() {
        let h = build_histogram(&[([0.0; 3], 1.0)], 10).unwrap();
        assert_eq!(h.mass(0, 0, 0), 1.0);
        let h = build_histogram(&[([1.0; 3], 1.0)], 10).unwrap();
        assert_eq!(h.mass(9, 9, 9), 1.0);
        let h = build_histogram(&[([0.0; 3], 0.25), ([1.0; 3], 0.75)], 10).unwrap();
        assert_eq!(h.mass(0, 0, 0), 0.25);
        assert_eq!(h.mass(9, 9, 9), 0.75);
        assert_eq!(build_histogram(&[([0.3; 3], 0.0)], 10), Err(HistogramError::EmptyDistribution));
        assert_eq!(build_histogram(&[], 0), Err(HistogramError::ZeroBins));
    }

    #[test]
    fn bin_means_track_votes() {
        let h = build_histogram(&[([0.31, 0.32, 0.33], 1.0), ([0.33, 0.34, 0.35], 3.0)], 10).unwrap();
        let occ = h.occupied();
        assert_eq!(occ.len(), 1);
        assert_abs_diff_eq!(occ[0].0[0], 0.325, epsilon = 1e-12);
        assert_eq!(h.occupied_centers()[0].0, [0.35, 0.35, 0.35]);
    }

    #[test]
    fn sail_histogram_votes() {
        let sail = ColorSail::flat([[0.05, 0.05, 0.05], [0.55, 0.05, 0.05], [0.05, 0.95, 0.05]], 2).unwrap();
        let h = sail_histogram(&decode(&sail, false, true), 10).unwrap();
        assert_eq!(h.support_len(), 3);
        for (_, m) in h.occupied() {
            assert_abs_diff_eq!(m, 1.0 / 3.0, epsilon = 1e-15);
        }
        let sail = ColorSail::flat([[0.05, 0.05, 0.05], [0.06, 0.05, 0.05], [0.05, 0.95, 0.05]], 2).unwrap();
        let h = sail_histogram(&decode(&sail, false, true), 10).unwrap();
        assert_abs_diff_eq!(h.mass(0, 0, 0), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn sail_histogram_matches_brute_force_binning() {
        let sail = ColorSail::new(
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            (1.0 / 3.0, 1.0 / 3.0),
            1.0,
            3,
        )
        .unwrap();
        let decoded = decode(&sail, true, false);
        assert_eq!(decoded.len(), 9);
        let h = sail_histogram(&decoded, 10).unwrap();
        let mut brute = vec![0.0; 1000];
        for c in &decoded.colors {
            let idx: Vec<usize> = c.iter().map(|&x| ((x * 10.0).floor().max(0.0) as usize).min(9)).collect();
            brute[idx[0] * 100 + idx[1] * 10 + idx[2]] += 1.0 / 9.0;
        }
        for (a, b) in h.masses().iter().zip(&brute) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn patchmax_examples() {
        let solid = Raster::filled(13, 9, [0.2, 0.7, 0.4]);
        let h = patchmax_histogram(&solid, 8, 10).unwrap();
        assert_eq!(h.support_len(), 1);
        assert_eq!(h.total(), 1.0);

        let halves = Raster::from_fn(16, 8, |x, _| if x < 8 { [0.9, 0.1, 0.1] } else { [0.1, 0.1, 0.9] });
        let h = patchmax_histogram(&halves, 8, 10).unwrap();
        assert_eq!(h.mass(9, 1, 1), 0.5);
        assert_eq!(h.mass(1, 1, 9), 0.5);

        let small = Raster::from_fn(5, 6, |x, y| [x as f64 / 5.0, y as f64 / 6.0, 0.5]);
        let single = patchmax_histogram(&small, 8, 10).unwrap();
        let plain = build_histogram(&small.pixels().iter().map(|&c| (c, 1.0)).collect::<Vec<_>>(), 10).unwrap();
        for (a, b) in single.masses().iter().zip(plain.masses()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn entropy_labels() {
        let one = build_histogram(&[([0.5; 3], 1.0)], 10).unwrap();
        assert_eq!(histogram_entropy(&one), 0.0);
        assert_eq!(Hardness::from_entropy(0.0), Hardness::Easy);
        let uniform = |k: usize| {
            let mut masses = vec![0.0; 1000];
            masses.iter_mut().take(k).for_each(|m| *m = 1.0);
            ColorHistogram::from_masses(10, masses).unwrap()
        };
        let e8 = histogram_entropy(&uniform(8));
        assert_abs_diff_eq!(e8, 3.0, epsilon = 1e-12);
        assert_eq!(Hardness::from_entropy(3.0), Hardness::Medium);
        let e16 = histogram_entropy(&uniform(16));
        assert_abs_diff_eq!(e16, 4.0, epsilon = 1e-12);
        assert_eq!(Hardness::from_entropy(e16), Hardness::Hard);
    }

    #[test]
    fn colorfulness_examples() {
        let gray = Raster::from_fn(7, 5, |x, y| [(x + y) as f64 / 12.0; 3]);
        assert_abs_diff_eq!(colorfulness(&gray), 0.0, epsilon = 1e-9);
        let red = Raster::filled(4, 4, [1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(colorfulness(&red), 0.3 * (255.0f64.powi(2) + 127.5f64.powi(2)).sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(colorfulness(&red), 85.55, epsilon = 0.05);
    }

    #[test]
    fn colorfulness_red_green_halves() {
        // rg = ±255 half each, yb = 127.5 everywhere
        let img = Raster::from_fn(8, 4, |x, _| if x < 4 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] });
        let expected = 255.0 + 0.3 * 127.5;
        assert_abs_diff_eq!(colorfulness(&img), expected, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn lab_roundtrip(r in 0.0..=1.0f64, g in 0.0..=1.0f64, b in 0.0..=1.0f64) {
            let lab = srgb_to_lab([r, g, b]);
            let back = srgb_to_lab(lab_to_srgb(lab));
            prop_assert!(lab.distance(&back) < 0.01);
            prop_assert!((-1e-9..=100.0 + 1e-6).contains(&lab.l));
        }

        #[test]
        fn histogram_mass_conservation(
            pixels in prop::collection::vec(((0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64), 0.0..5.0f64), 1..60),
            n in 1usize..12,
        ) {
            let px: Vec<(Rgb, f64)> = pixels.iter().map(|&((r, g, b), w)| ([r, g, b], w)).collect();
            let total: f64 = px.iter().map(|p| p.1).sum();
            let raw = ColorHistogram::accumulate(px.iter().copied(), n).unwrap();
            prop_assert!((raw.total() - total).abs() < 1e-9);
            if total > 0.0 {
                let h = build_histogram(&px, n).unwrap();
                prop_assert!((h.total() - 1.0).abs() < 1e-9);
                let e = histogram_entropy(&h);
                prop_assert!(e >= 0.0 && e <= 3.0 * (n as f64).log2() + 1e-9);
            }
        }

        #[test]
        fn bin_index_monotone(a in 0.0..=1.0f64, b in 0.0..=1.0f64, n in 1usize..20) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(channel_bin(lo, n) <= channel_bin(hi, n));
            prop_assert!(channel_bin(hi, n) < n);
            if hi < 1.0 {
                prop_assert_eq!(channel_bin(hi, n), (hi * n as f64).floor() as usize);
            }
        }

        #[test]
        fn patchmax_of_constant_image(r in 0.0..=1.0f64, g in 0.0..=1.0f64, w in 1usize..20, h in 1usize..20) {
            let img = Raster::filled(w, h, [r, g, 0.5]);
            let pm = patchmax_histogram(&img, 8, 10).unwrap();
            let plain = build_histogram(&img.pixels().iter().map(|&c| (c, 1.0)).collect::<Vec<_>>(), 10).unwrap();
            prop_assert_eq!(pm.masses(), plain.masses());
        }
    }
}
