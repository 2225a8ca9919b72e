//! Flat rendering of a sail on a fixed equilateral layout.

use colorsail::raster::quantize_rgb;
use colorsail::sail::{decode, ColorSail, PointKind};
use image::{Rgba, RgbaImage};

const MARGIN: f64 = 0.04;

/// Triangle corners in pixel coordinates: `v0` at the top, `v1` bottom
/// left, `v2` bottom right.
pub fn layout(size: u32) -> [[f64; 2]; 3] {
    let s = size as f64;
    let side = s * (1.0 - 2.0 * MARGIN);
    let height = side * 3f64.sqrt() / 2.0;
    let top = (s - height) / 2.0;
    let cx = s / 2.0;
    [[cx, top], [cx - side / 2.0, top + height], [cx + side / 2.0, top + height]]
}

fn barycentric(p: [f64; 2], t: &[[f64; 2]; 3]) -> [f64; 3] {
    let [a, b, c] = *t;
    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    let l0 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
    let l1 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
    [l0, l1, 1.0 - l0 - l1]
}

/// Patch of the subdivided triangle containing barycentric point `b`, as
/// `(kind, i, j)` in lattice coordinates.
pub fn patch_at(b: [f64; 3], s: u32) -> (PointKind, u32, u32) {
    let sf = s as f64;
    let (x, y) = (b[0] * sf, b[1] * sf);
    let i = (x.floor().max(0.0) as u32).min(s - 1);
    let j = (y.floor().max(0.0) as u32).min(s - 1 - i);
    let (fx, fy) = (x - i as f64, y - j as f64);
    if fx + fy >= 1.0 && i + j + 2 <= s {
        (PointKind::Downward, i, j)
    } else {
        (PointKind::Upright, i, j)
    }
}

/// Upright patches take the grid-point colors, downward patches the
/// centroid colors; pixels outside the triangle are transparent.
pub fn render(sail: &ColorSail, size: u32) -> RgbaImage {
    let decoded = decode(sail, true, true);
    let s = sail.subdivision();
    let lookup = |kind: PointKind, i: u32, j: u32| {
        decoded
            .points
            .iter()
            .position(|g| g.kind == kind && g.i == i && g.j == j)
            .expect("every patch has a lattice point")
    };
    let mut index = std::collections::HashMap::new();
    let tri = layout(size);
    let mut img = RgbaImage::new(size, size);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let b = barycentric([x as f64 + 0.5, y as f64 + 0.5], &tri);
        if b.iter().any(|&v| v < 0.0) {
            continue;
        }
        let key = patch_at(b, s);
        let k = *index.entry(key).or_insert_with(|| lookup(key.0, key.1, key.2));
        let [r, g, bl] = quantize_rgb(decoded.colors[k]);
        *px = Rgba([r, g, bl, 255]);
    }
    img
}
