//! Color sail geometry.
//!
//! A sail is a triangle of RGB space spanned by three vertex colors, bent out
//! of plane by a cubic Bezier triangle whose interior control points are
//! pushed along the (unnormalized) triangle normal. The subdivision level `s`
//! picks a discrete barycentric lattice on that surface; decoding evaluates
//! the surface at every lattice point.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Rgb = [f64; 3];

/// Falloff variance of the wind Gaussian.
pub const FALLOFF_ALPHA: f64 = 0.8;
/// Maximal wind displacement scale.
pub const FALLOFF_BETA: f64 = 0.25;

/// Number of free parameters a sail exposes to gradient descent:
/// 9 vertex channels, the focus point and the wind.
pub const PARAM_COUNT: usize = 12;
pub const PARAM_FOCUS_U: usize = 9;
pub const PARAM_FOCUS_V: usize = 10;
pub const PARAM_WIND: usize = 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SailError {
    #[error("subdivision must be at least 2, got {0}")]
    InvalidSubdivision(u32),
    #[error("vertex {vertex} channel {channel} is {value}, expected a value in [0, 1]")]
    VertexOutOfRange { vertex: usize, channel: usize, value: f64 },
    #[error("focus ({0}, {1}) lies outside the barycentric simplex")]
    FocusOutOfSimplex(f64, f64),
    #[error("wind {0} outside [-1, 1]")]
    WindOutOfRange(f64),
    #[error("barycentric point ({0}, {1}) lies outside the simplex")]
    OutsideSimplex(f64, f64),
}

/// The sail parameters. Construct with [`ColorSail::new`], which validates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSail", into = "RawSail")]
pub struct ColorSail {
    vertices: [Rgb; 3],
    focus: (f64, f64),
    wind: f64,
    subdivision: u32,
}

#[derive(Serialize, Deserialize)]
struct RawSail {
    vertices: [Rgb; 3],
    focus: [f64; 2],
    wind: f64,
    subdivision: u32,
}

impl TryFrom<RawSail> for ColorSail {
    type Error = SailError;

    fn try_from(raw: RawSail) -> Result<Self, SailError> {
        ColorSail::new(raw.vertices, (raw.focus[0], raw.focus[1]), raw.wind, raw.subdivision)
    }
}

impl From<ColorSail> for RawSail {
    fn from(s: ColorSail) -> Self {
        RawSail {
            vertices: s.vertices,
            focus: [s.focus.0, s.focus.1],
            wind: s.wind,
            subdivision: s.subdivision,
        }
    }
}

const SIMPLEX_TOL: f64 = 1e-12;

impl ColorSail {
    pub fn new(
        vertices: [Rgb; 3],
        focus: (f64, f64),
        wind: f64,
        subdivision: u32,
    ) -> Result<Self, SailError> {
        if subdivision < 2 {
            return Err(SailError::InvalidSubdivision(subdivision));
        }
        for (vertex, v) in vertices.iter().enumerate() {
            for (channel, &value) in v.iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    return Err(SailError::VertexOutOfRange { vertex, channel, value });
                }
            }
        }
        let (pu, pv) = focus;
        if !(pu >= 0.0 && pv >= 0.0 && pu + pv <= 1.0 + SIMPLEX_TOL) {
            return Err(SailError::FocusOutOfSimplex(pu, pv));
        }
        if !(-1.0..=1.0).contains(&wind) {
            return Err(SailError::WindOutOfRange(wind));
        }
        Ok(ColorSail { vertices, focus, wind, subdivision })
    }

    /// A flat sail with the focus at the centroid.
    pub fn flat(vertices: [Rgb; 3], subdivision: u32) -> Result<Self, SailError> {
        Self::new(vertices, (1.0 / 3.0, 1.0 / 3.0), 0.0, subdivision)
    }

    pub fn vertices(&self) -> &[Rgb; 3] {
        &self.vertices
    }

    pub fn vertex(&self, k: usize) -> Rgb {
        self.vertices[k]
    }

    pub fn focus(&self) -> (f64, f64) {
        self.focus
    }

    pub fn wind(&self) -> f64 {
        self.wind
    }

    pub fn subdivision(&self) -> u32 {
        self.subdivision
    }

    pub fn with_vertex(&self, k: usize, color: Rgb) -> Result<Self, SailError> {
        let mut vertices = self.vertices;
        vertices[k] = color;
        Self::new(vertices, self.focus, self.wind, self.subdivision)
    }

    pub fn with_focus(&self, focus: (f64, f64)) -> Result<Self, SailError> {
        Self::new(self.vertices, focus, self.wind, self.subdivision)
    }

    pub fn with_wind(&self, wind: f64) -> Result<Self, SailError> {
        Self::new(self.vertices, self.focus, wind, self.subdivision)
    }

    pub fn with_subdivision(&self, subdivision: u32) -> Result<Self, SailError> {
        Self::new(self.vertices, self.focus, self.wind, subdivision)
    }

    /// Flattened continuous parameters: v0, v1, v2 (row-major), p_u, p_v, w.
    pub fn params(&self) -> [f64; PARAM_COUNT] {
        let mut p = [0.0; PARAM_COUNT];
        for k in 0..3 {
            p[3 * k..3 * k + 3].copy_from_slice(&self.vertices[k]);
        }
        p[PARAM_FOCUS_U] = self.focus.0;
        p[PARAM_FOCUS_V] = self.focus.1;
        p[PARAM_WIND] = self.wind;
        p
    }

    /// Builds a sail from raw parameters, projecting each group back onto its
    /// feasible set: vertices to the unit cube, focus to the simplex, wind
    /// to [-1, 1]. Non-finite entries are rejected.
    pub fn from_params_projected(params: &[f64; PARAM_COUNT], subdivision: u32) -> Result<Self, SailError> {
        let mut vertices = [[0.0; 3]; 3];
        for k in 0..3 {
            for c in 0..3 {
                let x = params[3 * k + c];
                if !x.is_finite() {
                    return Err(SailError::VertexOutOfRange { vertex: k, channel: c, value: x });
                }
                vertices[k][c] = x.clamp(0.0, 1.0);
            }
        }
        let (pu, pv) = (params[PARAM_FOCUS_U], params[PARAM_FOCUS_V]);
        if !(pu.is_finite() && pv.is_finite()) {
            return Err(SailError::FocusOutOfSimplex(pu, pv));
        }
        let focus = project_to_simplex(pu, pv);
        let wind = params[PARAM_WIND];
        if !wind.is_finite() {
            return Err(SailError::WindOutOfRange(wind));
        }
        Self::new(vertices, focus, wind.clamp(-1.0, 1.0), subdivision)
    }

    /// Unnormalized triangle normal `(v1 - v0) x (v2 - v0)`.
    pub fn normal(&self) -> Rgb {
        let [v0, v1, v2] = self.vertices;
        cross(sub(v1, v0), sub(v2, v0))
    }
}

/// Euclidean projection of `(u, v)` onto `{u >= 0, v >= 0, u + v <= 1}`.
pub fn project_to_simplex(u: f64, v: f64) -> (f64, f64) {
    if u >= 0.0 && v >= 0.0 && u + v <= 1.0 {
        return (u, v);
    }
    let candidates = [
        (u.clamp(0.0, 1.0), 0.0),
        (0.0, v.clamp(0.0, 1.0)),
        {
            // hypotenuse u + v = 1
            let t = ((u - v + 1.0) / 2.0).clamp(0.0, 1.0);
            (t, 1.0 - t)
        },
    ];
    let mut best = candidates[0];
    let mut best_d = f64::INFINITY;
    for c in candidates {
        let d = (c.0 - u).powi(2) + (c.1 - v).powi(2);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointKind {
    Upright,
    Downward,
}

/// A lattice point of the subdivided triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub i: u32,
    pub j: u32,
    pub bary: [f64; 3],
    pub kind: PointKind,
}

impl GridPoint {
    pub fn is_corner(&self) -> bool {
        self.kind == PointKind::Upright && self.bary.iter().any(|&b| b == 1.0)
    }
}

fn upright_bary(i: u32, j: u32, s: u32) -> [f64; 3] {
    let d = (s - 1) as f64;
    [i as f64 / d, j as f64 / d, (s - 1 - i - j) as f64 / d]
}

/// Canonical lattice enumeration: upright points `(i, j)` with
/// `i + j <= s - 1` in lexicographic order, then (optionally) the downward
/// centroids `(i, j)` with `i + j <= s - 2`, each the mean of the upright
/// points at `(i, j)`, `(i + 1, j)` and `(i, j + 1)`.
pub fn enumerate_grid(s: u32, include_downward: bool) -> Result<Vec<GridPoint>, SailError> {
    if s < 2 {
        return Err(SailError::InvalidSubdivision(s));
    }
    let total = if include_downward { s * s } else { s * (s + 1) / 2 };
    let mut out = Vec::with_capacity(total as usize);
    for i in 0..s {
        for j in 0..s - i {
            out.push(GridPoint { i, j, bary: upright_bary(i, j, s), kind: PointKind::Upright });
        }
    }
    if include_downward {
        for i in 0..s - 1 {
            for j in 0..s - 1 - i {
                let a = upright_bary(i, j, s);
                let b = upright_bary(i + 1, j, s);
                let c = upright_bary(i, j + 1, s);
                let bary = [
                    (a[0] + b[0] + c[0]) / 3.0,
                    (a[1] + b[1] + c[1]) / 3.0,
                    (a[2] + b[2] + c[2]) / 3.0,
                ];
                out.push(GridPoint { i, j, bary, kind: PointKind::Downward });
            }
        }
    }
    Ok(out)
}

/// Exponent triples `(i, j, k)` of the cubic Bezier triangle, in the order
/// used for every 10-element array in this module. Corners come first and
/// the focus point `(1, 1, 1)` last.
pub const CONTROL_INDICES: [(u32, u32, u32); 10] = [
    (3, 0, 0),
    (0, 3, 0),
    (0, 0, 3),
    (2, 1, 0),
    (1, 2, 0),
    (2, 0, 1),
    (1, 0, 2),
    (0, 2, 1),
    (0, 1, 2),
    (1, 1, 1),
];
const CORNERS: usize = 3;
const FOCUS_INDEX: usize = 9;

fn multinomial(i: u32, j: u32, k: u32) -> f64 {
    const FACT: [f64; 4] = [1.0, 1.0, 2.0, 6.0];
    6.0 / (FACT[i as usize] * FACT[j as usize] * FACT[k as usize])
}

/// Cubic Bernstein basis `B_ijk(u0, u1)` in [`CONTROL_INDICES`] order.
pub fn bernstein_basis(u0: f64, u1: f64) -> Result<[f64; 10], SailError> {
    let tol = 1e-12;
    if !(u0 >= -tol && u1 >= -tol && u0 + u1 <= 1.0 + tol) {
        return Err(SailError::OutsideSimplex(u0, u1));
    }
    Ok(bernstein_unchecked(u0, u1))
}

pub(crate) fn bernstein_unchecked(u0: f64, u1: f64) -> [f64; 10] {
    let u2 = 1.0 - u0 - u1;
    let mut out = [0.0; 10];
    for (m, &(i, j, k)) in CONTROL_INDICES.iter().enumerate() {
        out[m] = multinomial(i, j, k) * u0.powi(i as i32) * u1.powi(j as i32) * u2.powi(k as i32);
    }
    out
}

/// Barycentric coordinates of each control point as a function of the focus,
/// together with their partial derivatives in `p_u` and `p_v`.
fn control_barycentrics(pu: f64, pv: f64) -> [([f64; 3], [f64; 3], [f64; 3]); 10] {
    let z = [0.0; 3];
    [
        ([1.0, 0.0, 0.0], z, z),
        ([0.0, 1.0, 0.0], z, z),
        ([0.0, 0.0, 1.0], z, z),
        // (2,1,0)
        ([1.0 - pv, pv, 0.0], z, [-1.0, 1.0, 0.0]),
        // (1,2,0)
        ([pu, 1.0 - pu, 0.0], [1.0, -1.0, 0.0], z),
        // (2,0,1)
        ([pu + pv, 0.0, 1.0 - pu - pv], [1.0, 0.0, -1.0], [1.0, 0.0, -1.0]),
        // (1,0,2)
        ([pu, 0.0, 1.0 - pu], [1.0, 0.0, -1.0], z),
        // (0,2,1)
        ([0.0, pu + pv, 1.0 - pu - pv], [0.0, 1.0, -1.0], [0.0, 1.0, -1.0]),
        // (0,1,2)
        ([0.0, pv, 1.0 - pv], z, [0.0, 1.0, -1.0]),
        // (1,1,1)
        ([pu, pv, 1.0 - pu - pv], [1.0, 0.0, -1.0], [0.0, 1.0, -1.0]),
    ]
}

/// The 10 Bezier control points of a sail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlNet {
    pub points: [Rgb; 10],
}

impl ControlNet {
    pub fn point(&self, i: u32, j: u32, k: u32) -> Option<Rgb> {
        CONTROL_INDICES.iter().position(|&t| t == (i, j, k)).map(|m| self.points[m])
    }

    /// Evaluates the Bezier triangle at `(u0, u1)`.
    pub fn evaluate(&self, u0: f64, u1: f64) -> Result<Rgb, SailError> {
        let b = bernstein_basis(u0, u1)?;
        Ok(self.evaluate_weights(&b))
    }

    fn evaluate_weights(&self, b: &[f64; 10]) -> Rgb {
        let mut c = [0.0; 3];
        for (w, p) in b.iter().zip(&self.points) {
            c[0] += w * p[0];
            c[1] += w * p[1];
            c[2] += w * p[2];
        }
        c
    }
}

/// Intermediate quantities shared by decoding and differentiation.
struct NetTerms {
    bary: [([f64; 3], [f64; 3], [f64; 3]); 10],
    /// Falloff `f(d^2)` per control point (zero for corners).
    falloff: [f64; 10],
    /// Partials of the falloff in `p_u` and `p_v`.
    dfalloff: [[f64; 2]; 10],
    normal: Rgb,
}

impl NetTerms {
    fn new(sail: &ColorSail) -> Self {
        let (pu, pv) = sail.focus;
        let bary = control_barycentrics(pu, pv);
        let (focus, dfocus_u, dfocus_v) = bary[FOCUS_INDEX];
        let mut falloff = [0.0; 10];
        let mut dfalloff = [[0.0; 2]; 10];
        for m in CORNERS..10 {
            let (u, du, dv) = bary[m];
            let diff = sub(u, focus);
            let d2 = dot(diff, diff);
            let f = FALLOFF_BETA * (-d2 / FALLOFF_ALPHA).exp();
            falloff[m] = f;
            let dd2_u = 2.0 * dot(diff, sub(du, dfocus_u));
            let dd2_v = 2.0 * dot(diff, sub(dv, dfocus_v));
            dfalloff[m] = [-f * dd2_u / FALLOFF_ALPHA, -f * dd2_v / FALLOFF_ALPHA];
        }
        NetTerms { bary, falloff, dfalloff, normal: sail.normal() }
    }
}

/// Control points `p_ijk = V u_ijk + f(d^2_ijk) w n`; corners are not displaced.
pub fn control_points(sail: &ColorSail) -> ControlNet {
    let terms = NetTerms::new(sail);
    let mut points = [[0.0; 3]; 10];
    for (m, point) in points.iter_mut().enumerate() {
        let planar = mat_vec(&sail.vertices, terms.bary[m].0);
        let disp = terms.falloff[m] * sail.wind;
        *point = [
            planar[0] + disp * terms.normal[0],
            planar[1] + disp * terms.normal[1],
            planar[2] + disp * terms.normal[2],
        ];
    }
    ControlNet { points }
}

/// Every decoded color of a sail together with its lattice point.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSail {
    pub sail: ColorSail,
    pub points: Vec<GridPoint>,
    pub colors: Vec<Rgb>,
}

impl DecodedSail {
    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }
}

pub fn decode(sail: &ColorSail, include_downward: bool, clamp: bool) -> DecodedSail {
    let decoder = Decoder::new(sail.subdivision, include_downward);
    let colors = decoder.decode_colors(sail, clamp);
    DecodedSail { sail: *sail, points: decoder.points, colors }
}

/// Decoded-color Jacobian: `jac[c][channel][param]` over [`ColorSail::params`].
pub type ColorJacobian = [[f64; PARAM_COUNT]; 3];

/// Analytic partial derivatives of every (unclamped, expanded) decoded
/// color with respect to the 12 continuous sail parameters.
pub fn decode_jacobian(sail: &ColorSail) -> Vec<ColorJacobian> {
    let decoder = Decoder::new(sail.subdivision, true);
    let terms = NetTerms::new(sail);
    let [v0, v1, v2] = sail.vertices;
    let e1 = sub(v1, v0);
    let e2 = sub(v2, v0);
    let w = sail.wind;
    let n = terms.normal;
    // dn/de1 · δ = δ × e2, dn/de2 · δ = e1 × δ
    let mut dn_de1 = [[0.0; 3]; 3];
    let mut dn_de2 = [[0.0; 3]; 3];
    for q in 0..3 {
        let mut unit = [0.0; 3];
        unit[q] = 1.0;
        let a = cross(unit, e2);
        let b = cross(e1, unit);
        for r in 0..3 {
            dn_de1[r][q] = a[r];
            dn_de2[r][q] = b[r];
        }
    }

    decoder
        .weights
        .iter()
        .map(|b| {
            let mut g = [0.0; 3];
            let mut dg_u = [0.0; 3];
            let mut dg_v = [0.0; 3];
            let mut h = 0.0;
            let mut dh = [0.0; 2];
            for m in 0..10 {
                let (u, du, dv) = terms.bary[m];
                for a in 0..3 {
                    g[a] += b[m] * u[a];
                    dg_u[a] += b[m] * du[a];
                    dg_v[a] += b[m] * dv[a];
                }
                h += b[m] * terms.falloff[m];
                dh[0] += b[m] * terms.dfalloff[m][0];
                dh[1] += b[m] * terms.dfalloff[m][1];
            }
            let mut jac = [[0.0; PARAM_COUNT]; 3];
            let pu_dir = mat_vec(&sail.vertices, dg_u);
            let pv_dir = mat_vec(&sail.vertices, dg_v);
            for r in 0..3 {
                for a in 0..3 {
                    jac[r][3 * a + r] += g[a];
                }
                for q in 0..3 {
                    let d1 = w * h * dn_de1[r][q];
                    let d2 = w * h * dn_de2[r][q];
                    jac[r][3 + q] += d1;
                    jac[r][6 + q] += d2;
                    jac[r][q] -= d1 + d2;
                }
                jac[r][PARAM_FOCUS_U] = pu_dir[r] + w * dh[0] * n[r];
                jac[r][PARAM_FOCUS_V] = pv_dir[r] + w * dh[1] * n[r];
                jac[r][PARAM_WIND] = h * n[r];
            }
            jac
        })
        .collect()
}

/// Cached lattice and Bernstein weights for one subdivision level.
///
/// Decoding many sails of the same `s` (as the optimizers do) only costs
/// one control-net evaluation per color.
#[derive(Debug, Clone)]
pub struct Decoder {
    subdivision: u32,
    points: Vec<GridPoint>,
    weights: Vec<[f64; 10]>,
}

impl Decoder {
    pub fn new(subdivision: u32, include_downward: bool) -> Self {
        let points = enumerate_grid(subdivision.max(2), include_downward)
            .expect("subdivision clamped to >= 2");
        let weights = points.iter().map(|p| bernstein_unchecked(p.bary[0], p.bary[1])).collect();
        Decoder { subdivision: subdivision.max(2), points, weights }
    }

    pub fn subdivision(&self) -> u32 {
        self.subdivision
    }

    pub fn points(&self) -> &[GridPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn weights(&self, index: usize) -> &[f64; 10] {
        &self.weights[index]
    }

    pub fn decode_colors(&self, sail: &ColorSail, clamp: bool) -> Vec<Rgb> {
        let net = control_points(sail);
        self.weights
            .iter()
            .map(|b| {
                let c = net.evaluate_weights(b);
                if clamp {
                    clamp_rgb(c)
                } else {
                    c
                }
            })
            .collect()
    }

    /// Reverse-mode pass: given `dL/dc` for every decoded color, returns
    /// `dL/dθ` over [`ColorSail::params`].
    pub fn backprop(&self, sail: &ColorSail, color_grads: &[Rgb]) -> [f64; PARAM_COUNT] {
        debug_assert_eq!(color_grads.len(), self.weights.len());
        let mut net_grads = [[0.0; 3]; 10];
        for (b, g) in self.weights.iter().zip(color_grads) {
            if g == &[0.0; 3] {
                continue;
            }
            for m in 0..10 {
                net_grads[m][0] += b[m] * g[0];
                net_grads[m][1] += b[m] * g[1];
                net_grads[m][2] += b[m] * g[2];
            }
        }
        control_net_backprop(sail, &net_grads)
    }
}

/// Gradient of a scalar through the control net: `net_grads[m] = dL/dp_m`.
pub fn control_net_backprop(sail: &ColorSail, net_grads: &[Rgb; 10]) -> [f64; PARAM_COUNT] {
    let terms = NetTerms::new(sail);
    let w = sail.wind;
    let n = terms.normal;
    let mut out = [0.0; PARAM_COUNT];
    let mut grad_normal = [0.0; 3];
    for m in 0..10 {
        let gm = net_grads[m];
        let (u, du, dv) = terms.bary[m];
        for a in 0..3 {
            for c in 0..3 {
                out[3 * a + c] += u[a] * gm[c];
            }
        }
        // planar part through the focus-dependent barycentrics
        let vu = mat_vec(&sail.vertices, du);
        let vv = mat_vec(&sail.vertices, dv);
        out[PARAM_FOCUS_U] += dot(gm, vu);
        out[PARAM_FOCUS_V] += dot(gm, vv);
        if m >= CORNERS {
            let gn = dot(gm, n);
            let f = terms.falloff[m];
            out[PARAM_WIND] += f * gn;
            out[PARAM_FOCUS_U] += w * terms.dfalloff[m][0] * gn;
            out[PARAM_FOCUS_V] += w * terms.dfalloff[m][1] * gn;
            for c in 0..3 {
                grad_normal[c] += f * w * gm[c];
            }
        }
    }
    let [v0, v1, v2] = sail.vertices;
    let e1 = sub(v1, v0);
    let e2 = sub(v2, v0);
    let g_e1 = cross(e2, grad_normal);
    let g_e2 = cross(grad_normal, e1);
    for c in 0..3 {
        out[3 + c] += g_e1[c];
        out[6 + c] += g_e2[c];
        out[c] -= g_e1[c] + g_e2[c];
    }
    out
}

pub fn clamp_rgb(c: Rgb) -> Rgb {
    [c[0].clamp(0.0, 1.0), c[1].clamp(0.0, 1.0), c[2].clamp(0.0, 1.0)]
}

pub(crate) fn sub(a: Rgb, b: Rgb) -> Rgb {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Rgb, b: Rgb) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Rgb, b: Rgb) -> Rgb {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn dist2(a: Rgb, b: Rgb) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// `V u` with the vertices as matrix columns.
fn mat_vec(vertices: &[Rgb; 3], u: [f64; 3]) -> Rgb {
    let mut out = [0.0; 3];
    for a in 0..3 {
        for c in 0..3 {
            out[c] += vertices[a][c] * u[a];
        }
    }
    out
}
