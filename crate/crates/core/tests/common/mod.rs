//! Synthetic ground truth shared by the integration tests.
#![allow(dead_code)]

pub mod gradients;
pub mod oracles;

use colorsail::alpha::AlphaMasks;
use colorsail::raster::Raster;
use colorsail::sail::{decode, ColorSail, Decoder, Rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_color(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.random(), rng.random(), rng.random()]
}

pub fn random_focus(rng: &mut ChaCha8Rng) -> (f64, f64) {
    loop {
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        if u + v <= 1.0 {
            return (u, v);
        }
    }
}

/// Any valid sail: vertices in the unit cube, focus in the simplex,
/// wind in `[-1, 1]`.
pub fn random_sail(rng: &mut ChaCha8Rng, s: u32) -> ColorSail {
    let vertices = [random_color(rng), random_color(rng), random_color(rng)];
    let wind = rng.random_range(-1.0..=1.0);
    ColorSail::new(vertices, random_focus(rng), wind, s).unwrap()
}

fn inside_cube(sail: &ColorSail) -> bool {
    decode(sail, true, false).colors.iter().all(|c| c.iter().all(|v| (0.0..=1.0).contains(v)))
}

/// Ground-truth sail whose unclamped decode stays inside the unit cube
/// (rejection sampling), with `|w| <= max_wind`.
pub fn ground_truth_sail(rng: &mut ChaCha8Rng, s: u32, max_wind: f64) -> ColorSail {
    loop {
        let vertices = [random_color(rng), random_color(rng), random_color(rng)];
        let wind = rng.random_range(-max_wind..=max_wind);
        let sail = ColorSail::new(vertices, random_focus(rng), wind, s).unwrap();
        if inside_cube(&sail) {
            return sail;
        }
    }
}

/// Compact sail around `center`: each vertex within `radius` per channel.
pub fn compact_sail(rng: &mut ChaCha8Rng, center: Rgb, radius: f64, s: u32, max_wind: f64) -> ColorSail {
    loop {
        let mut vertices = [[0.0; 3]; 3];
        for v in vertices.iter_mut() {
            for ch in 0..3 {
                v[ch] = center[ch] + rng.random_range(-radius..=radius);
            }
        }
        if vertices.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            continue;
        }
        let wind = rng.random_range(-max_wind..=max_wind);
        let sail = ColorSail::new(vertices, random_focus(rng), wind, s).unwrap();
        if inside_cube(&sail) {
            return sail;
        }
    }
}

pub fn add_noise(rng: &mut ChaCha8Rng, c: Rgb, sigma: f64) -> Rgb {
    if sigma == 0.0 {
        return c;
    }
    let normal = Normal::new(0.0, sigma).unwrap();
    [0, 1, 2].map(|ch| (c[ch] + normal.sample(rng)).clamp(0.0, 1.0))
}

/// Every pixel is a uniformly chosen decoded color (expanded set, clamped)
/// plus Gaussian noise.
pub fn render_patch(rng: &mut ChaCha8Rng, sail: &ColorSail, width: usize, height: usize, sigma: f64) -> Raster {
    let colors = Decoder::new(sail.subdivision(), true).decode_colors(sail, true);
    Raster::from_fn(width, height, |_, _| {
        let c = colors[rng.random_range(0..colors.len())];
        add_noise(rng, c, sigma)
    })
}

pub struct Composite {
    pub image: Raster,
    pub sails: Vec<ColorSail>,
    /// Soft ground-truth alphas.
    pub masks: AlphaMasks,
    /// Region of each pixel (largest ground-truth alpha).
    pub labels: Vec<usize>,
}

/// Voronoi regions with soft boundaries: across the bisector of the two
/// nearest sites the alpha ramps linearly over `ramp` pixels. Each region
/// draws per-pixel colors from its own compact sail.
pub fn composite(
    rng: &mut ChaCha8Rng,
    width: usize,
    height: usize,
    regions: usize,
    subdivisions: std::ops::RangeInclusive<u32>,
    ramp: f64,
    sigma: f64,
) -> Composite {
    let min_sep = 0.35 * (width.min(height) as f64) / (regions as f64).sqrt();
    let mut sites: Vec<[f64; 2]> = Vec::new();
    while sites.len() < regions {
        let p = [rng.random_range(0.0..width as f64), rng.random_range(0.0..height as f64)];
        if sites.iter().all(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() >= min_sep) {
            sites.push(p);
        }
    }
    let mut centers: Vec<Rgb> = Vec::new();
    while centers.len() < regions {
        let c = [0, 1, 2].map(|_| rng.random_range(0.2..0.8));
        if centers.iter().all(|d| (0..3).map(|k| (c[k] - d[k]).powi(2)).sum::<f64>().sqrt() >= 0.45) {
            centers.push(c);
        }
    }
    let s = rng.random_range(subdivisions);
    let sails: Vec<ColorSail> = centers.iter().map(|&c| compact_sail(rng, c, 0.12, s, 0.5)).collect();
    let palettes: Vec<Vec<Rgb>> =
        sails.iter().map(|sl| Decoder::new(sl.subdivision(), true).decode_colors(sl, true)).collect();

    let mut planes = vec![vec![0.0; width * height]; regions];
    let mut labels = vec![0; width * height];
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            let d2: Vec<f64> = sites.iter().map(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).collect();
            let mut order: Vec<usize> = (0..regions).collect();
            order.sort_by(|&a, &b| d2[a].total_cmp(&d2[b]));
            let px = y * width + x;
            labels[px] = order[0];
            if regions == 1 {
                planes[0][px] = 1.0;
            } else {
                let (i, j) = (order[0], order[1]);
                let sep = ((sites[i][0] - sites[j][0]).powi(2) + (sites[i][1] - sites[j][1]).powi(2)).sqrt();
                let t = (d2[j] - d2[i]) / (2.0 * sep);
                let a = (0.5 + t / ramp).min(1.0);
                planes[i][px] = a;
                planes[j][px] = 1.0 - a;
            }
            let mut c = [0.0; 3];
            for (r, plane) in planes.iter().enumerate() {
                let a = plane[px];
                if a > 0.0 {
                    let pal = &palettes[r];
                    let col = pal[rng.random_range(0..pal.len())];
                    for ch in 0..3 {
                        c[ch] += a * col[ch];
                    }
                }
            }
            pixels.push(add_noise(rng, c, sigma));
        }
    }
    Composite {
        image: Raster::new(width, height, pixels).unwrap(),
        sails,
        masks: AlphaMasks::from_planes(width, height, &planes).unwrap(),
        labels,
    }
}

/// Mean IoU of binarized masks against ground-truth labels under the best
/// assignment of fitted masks to regions (exhaustive over permutations of
/// the smaller side).
pub fn best_mean_iou(truth: &[usize], truth_count: usize, fitted: &[usize], fitted_count: usize) -> f64 {
    let mut inter = vec![vec![0usize; fitted_count]; truth_count];
    let mut t_size = vec![0usize; truth_count];
    let mut f_size = vec![0usize; fitted_count];
    for (&t, &f) in truth.iter().zip(fitted) {
        inter[t][f] += 1;
        t_size[t] += 1;
        f_size[f] += 1;
    }
    let iou = |t: usize, f: usize| {
        let i = inter[t][f] as f64;
        let u = (t_size[t] + f_size[f]) as f64 - i;
        if u == 0.0 {
            0.0
        } else {
            i / u
        }
    };
    // assign each truth region a distinct fitted mask; unmatched regions score 0
    fn search(t: usize, used: &mut Vec<bool>, n_t: usize, n_f: usize, iou: &dyn Fn(usize, usize) -> f64) -> f64 {
        if t == n_t {
            return 0.0;
        }
        let mut best = search(t + 1, used, n_t, n_f, iou);
        for f in 0..n_f {
            if !used[f] {
                used[f] = true;
                best = best.max(iou(t, f) + search(t + 1, used, n_t, n_f, iou));
                used[f] = false;
            }
        }
        best
    }
    let mut used = vec![false; fitted_count];
    search(0, &mut used, truth_count, fitted_count, &iou) / truth_count as f64
}

pub fn psnr(a: &Raster, b: &Raster) -> f64 {
    let n = (a.len() * 3) as f64;
    let mse: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (0..3).map(|c| (x[c] - y[c]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
