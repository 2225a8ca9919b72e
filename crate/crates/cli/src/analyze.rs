//! Per-image color statistics over center-biased random patches.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use colorsail::colorimetry::{build_histogram, colorfulness, histogram_entropy, Hardness};
use colorsail::raster::Raster;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const ANALYZE_SIDE: usize = 512;
pub const PATCH: usize = 32;
pub const ENTROPY_BINS: usize = 10;
const BINS: usize = 10;

pub struct ImageStats {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub colorfulness: f64,
    pub entropies: Vec<f64>,
}

impl ImageStats {
    fn counts(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for &e in &self.entropies {
            match Hardness::from_entropy(e) {
                Hardness::Easy => out[0] += 1,
                Hardness::Medium => out[1] += 1,
                Hardness::Hard => out[2] += 1,
            }
        }
        out
    }

    /// Patch counts per 1-bit entropy interval; the last bin is open.
    fn entropy_histogram(&self) -> [usize; ENTROPY_BINS] {
        let mut out = [0; ENTROPY_BINS];
        for &e in &self.entropies {
            out[(e.max(0.0) as usize).min(ENTROPY_BINS - 1)] += 1;
        }
        out
    }
}

/// Top-left corner of one patch whose center is drawn from a Gaussian at
/// the image center with a quarter-side deviation, resampled until the
/// patch fits.
fn sample_corner(rng: &mut ChaCha8Rng, width: usize, height: usize, patch: usize) -> (usize, usize) {
    let axis = |rng: &mut ChaCha8Rng, side: usize| {
        if side <= patch {
            return 0;
        }
        let half = patch as f64 / 2.0;
        let normal = Normal::new(side as f64 / 2.0, side as f64 / 4.0).expect("positive deviation");
        loop {
            let c = normal.sample(rng);
            if c >= half && c <= side as f64 - half {
                return ((c - half).floor() as usize).min(side - patch);
            }
        }
    };
    let x = axis(rng, width);
    let y = axis(rng, height);
    (x, y)
}

pub fn analyze_image(name: &str, image: &Raster, patches: usize, seed: u64, stream: u64) -> ImageStats {
    let work = image.fit_within(ANALYZE_SIDE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let (w, h) = (work.width(), work.height());
    let entropies = (0..patches)
        .map(|_| {
            let (x, y) = sample_corner(&mut rng, w, h, PATCH);
            let tile = work.crop(x, y, PATCH.min(w), PATCH.min(h));
            let votes: Vec<_> = tile.pixels().iter().map(|&c| (c, 1.0)).collect();
            let hist = build_histogram(&votes, BINS).expect("tiles are nonempty");
            histogram_entropy(&hist)
        })
        .collect();
    ImageStats { name: name.to_string(), width: image.width(), height: image.height(), colorfulness: colorfulness(&work), entropies }
}

pub fn csv_header() -> String {
    let mut s = String::from("file,width,height,colorfulness,patches,mean_entropy");
    for b in 0..ENTROPY_BINS {
        let _ = write!(s, ",entropy_{b}");
    }
    s.push_str(",easy,medium,hard\n");
    s
}

pub fn csv_row(stats: &ImageStats) -> String {
    let n = stats.entropies.len();
    let mean = if n == 0 { 0.0 } else { stats.entropies.iter().sum::<f64>() / n as f64 };
    let mut s = format!("{},{},{},{:.4},{},{:.4}", stats.name, stats.width, stats.height, stats.colorfulness, n, mean);
    for c in stats.entropy_histogram() {
        let _ = write!(s, ",{c}");
    }
    let [e, m, hd] = stats.counts();
    let _ = writeln!(s, ",{e},{m},{hd}");
    s
}

/// PNG files in `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}
