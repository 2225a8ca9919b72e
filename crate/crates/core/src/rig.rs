//! The persistent rig: sails, quantized alpha masks and a frozen per-pixel
//! grid-index map per sail, plus recoloring and the on-disk bundle.
//!
//! Bundle layout (one directory):
//!
//! * `manifest.json`: `{version, width, height, image_sha256, sails: [{vertices,
//!   focus, wind, subdivision, alpha_file, index_file}], fit_config_digest}`
//! * `alpha_{i}.png`: 8-bit grayscale alpha of sail `i`
//! * `index_{i}.png`: 16-bit grayscale grid index of sail `i` (65535 = unmapped)
//! * `source.png`: the source image, used for unmapped pixels
//! * `reconstruction.png`: the unedited rendering at build time
//!
//! `image_sha256` is the SHA-256 of the source's interleaved RGB8 bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::alpha::RigFit;
use crate::metrics::nearest_index;
use crate::raster::{load_gray16, load_gray8, quantize_channel, save_gray16, save_gray8, Raster};
use crate::sail::{enumerate_grid, ColorSail, Decoder, Rgb, SailError};

pub const RIG_VERSION: u32 = 1;
pub const UNMAPPED: u16 = u16::MAX;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SOURCE_FILE: &str = "source.png";
pub const RECONSTRUCTION_FILE: &str = "reconstruction.png";
/// Largest subdivision whose expanded grid fits below the sentinel.
pub const MAX_RIG_SUBDIVISION: u32 = 255;

#[derive(Debug, Error)]
pub enum RigModelError {
    #[error("unsupported rig version {0} (expected {RIG_VERSION})")]
    Version(u64),
    #[error("missing bundle file {0}")]
    MissingFile(PathBuf),
    #[error("sail {sail}: {file} is {got:?}, expected {expected:?}")]
    Dimensions { sail: usize, file: String, expected: (usize, usize), got: (usize, usize) },
    #[error("bundle image is {got:?}, expected {expected:?}")]
    SourceDimensions { expected: (usize, usize), got: (usize, usize) },
    #[error("source image hash {got} does not match manifest {expected}")]
    SourceHash { expected: String, got: String },
    #[error("sail {sail}: index {index} out of range for subdivision {subdivision}")]
    IndexRange { sail: usize, index: u16, subdivision: u32 },
    #[error("unmapped pixels present but the bundle has no {SOURCE_FILE}")]
    MissingSource,
    #[error("malformed manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("invalid sail {sail}: {source}")]
    Sail { sail: usize, source: SailError },
    #[error("edit refers to sail {sail} but the rig has {count}")]
    EditSail { sail: usize, count: usize },
    #[error("invalid edit of sail {sail}, field `{field}`: {source}")]
    EditField { sail: usize, field: String, source: SailError },
    #[error("subdivision {0} is too large for 16-bit index maps")]
    SubdivisionTooLarge(u32),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("image error on {path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
}

/// How pixels are linked to sail colors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingStrategy {
    /// Nearest decoded color in RGB, ties → lowest canonical index.
    #[default]
    NearestColor,
}

/// One sail with its alpha mask and frozen index map.
#[derive(Debug, Clone, PartialEq)]
pub struct RigLayer {
    pub sail: ColorSail,
    pub alpha: Vec<u8>,
    pub indices: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SailRig {
    width: usize,
    height: usize,
    image_sha256: String,
    fit_config_digest: String,
    layers: Vec<RigLayer>,
    source: Option<Vec<u8>>,
    reconstruction: Option<Vec<u8>>,
}

/// Replacement values for part of one sail.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SailPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertex0: Option<Rgb>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertex1: Option<Rgb>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertex2: Option<Rgb>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focus: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wind: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subdivision: Option<u32>,
}

/// One entry of an edits file: `{"sail": i, "set": {...}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditDelta {
    pub sail: usize,
    #[serde(default)]
    pub set: SailPatch,
}

impl EditDelta {
    /// Applies the replacements in the order vertices, focus, wind,
    /// subdivision.
    pub fn apply(&self, sail: &ColorSail) -> Result<ColorSail, RigModelError> {
        let field_err = |field: &str, source| RigModelError::EditField { sail: self.sail, field: field.into(), source };
        let mut out = *sail;
        let set = &self.set;
        for (k, v) in [set.vertex0, set.vertex1, set.vertex2].iter().enumerate() {
            if let Some(c) = v {
                out = out.with_vertex(k, *c).map_err(|e| field_err(&format!("vertex{k}"), e))?;
            }
        }
        if let Some([u, v]) = set.focus {
            out = out.with_focus((u, v)).map_err(|e| field_err("focus", e))?;
        }
        if let Some(w) = set.wind {
            out = out.with_wind(w).map_err(|e| field_err("wind", e))?;
        }
        if let Some(s) = set.subdivision {
            if s > MAX_RIG_SUBDIVISION {
                return Err(field_err("subdivision", SailError::InvalidSubdivision(s)));
            }
            out = out.with_subdivision(s).map_err(|e| field_err("subdivision", e))?;
        }
        Ok(out)
    }
}

/// SHA-256 (hex) of a raster's interleaved RGB8 bytes.
pub fn image_sha256(image: &Raster) -> String {
    sha256_hex(&image.to_rgb8_bytes())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn check_subdivision(s: u32) -> Result<(), RigModelError> {
    if s > MAX_RIG_SUBDIVISION {
        return Err(RigModelError::SubdivisionTooLarge(s));
    }
    Ok(())
}

/// Frozen index map of `image` against the clamped, expanded colors of
/// `sail`.
pub fn map_pixels(image: &Raster, sail: &ColorSail, strategy: MappingStrategy) -> Vec<u16> {
    match strategy {
        MappingStrategy::NearestColor => {
            let colors = Decoder::new(sail.subdivision(), true).decode_colors(sail, true);
            image.pixels().iter().map(|&c| nearest_index(c, &colors) as u16).collect()
        }
    }
}

/// Builds a rig at the image's own resolution: alphas are upsampled
/// bilinearly, quantized to 8 bits, and each pixel is linked to its nearest
/// decoded color of every sail.
pub fn build_mapping(image: &Raster, fit: &RigFit, fit_config_digest: &str) -> Result<SailRig, RigModelError> {
    build_mapping_with(image, fit, fit_config_digest, MappingStrategy::NearestColor)
}

pub fn build_mapping_with(
    image: &Raster,
    fit: &RigFit,
    fit_config_digest: &str,
    strategy: MappingStrategy,
) -> Result<SailRig, RigModelError> {
    for s in &fit.sails {
        check_subdivision(s.subdivision())?;
    }
    let masks = fit.masks.resized(image.width(), image.height());
    let layers = fit
        .sails
        .iter()
        .enumerate()
        .map(|(i, sail)| RigLayer {
            sail: *sail,
            alpha: masks.plane(i).into_iter().map(quantize_channel).collect(),
            indices: map_pixels(image, sail, strategy),
        })
        .collect();
    let mut rig = SailRig {
        width: image.width(),
        height: image.height(),
        image_sha256: image_sha256(image),
        fit_config_digest: fit_config_digest.to_string(),
        layers,
        source: Some(image.to_rgb8_bytes()),
        reconstruction: None,
    };
    rig.reconstruction = Some(rig.render_rgb8());
    Ok(rig)
}

impl SailRig {
    /// Assembles a rig from parts, validating dimensions and index ranges.
    pub fn from_layers(
        width: usize,
        height: usize,
        layers: Vec<RigLayer>,
        source: Option<&Raster>,
        fit_config_digest: &str,
    ) -> Result<SailRig, RigModelError> {
        let source_bytes = match source {
            Some(img) => {
                if (img.width(), img.height()) != (width, height) {
                    return Err(RigModelError::SourceDimensions {
                        expected: (width, height),
                        got: (img.width(), img.height()),
                    });
                }
                Some(img.to_rgb8_bytes())
            }
            None => None,
        };
        let image_sha256 = source_bytes.as_deref().map(sha256_hex).unwrap_or_default();
        let mut rig = SailRig {
            width,
            height,
            image_sha256,
            fit_config_digest: fit_config_digest.to_string(),
            layers,
            source: source_bytes,
            reconstruction: None,
        };
        rig.validate()?;
        rig.reconstruction = Some(rig.render_rgb8());
        Ok(rig)
    }

    fn validate(&self) -> Result<(), RigModelError> {
        let p = self.width * self.height;
        let mut unmapped = false;
        for (i, layer) in self.layers.iter().enumerate() {
            check_subdivision(layer.sail.subdivision())?;
            for (file, len) in [(alpha_file(i), layer.alpha.len()), (index_file(i), layer.indices.len())] {
                if len != p {
                    return Err(RigModelError::Dimensions {
                        sail: i,
                        file,
                        expected: (self.width, self.height),
                        got: (len, 1),
                    });
                }
            }
            let s = layer.sail.subdivision();
            let limit = s * s;
            for &idx in &layer.indices {
                if idx == UNMAPPED {
                    unmapped = true;
                } else if u32::from(idx) >= limit {
                    return Err(RigModelError::IndexRange { sail: i, index: idx, subdivision: s });
                }
            }
        }
        if unmapped && self.source.is_none() {
            return Err(RigModelError::MissingSource);
        }
        Ok(())
    }

    pub fn version(&self) -> u32 {
        RIG_VERSION
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn image_sha256(&self) -> &str {
        &self.image_sha256
    }

    pub fn fit_config_digest(&self) -> &str {
        &self.fit_config_digest
    }

    pub fn layers(&self) -> &[RigLayer] {
        &self.layers
    }

    pub fn sails(&self) -> Vec<ColorSail> {
        self.layers.iter().map(|l| l.sail).collect()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Source image as RGB8 bytes, when stored.
    pub fn source(&self) -> Option<&[u8]> {
        self.source.as_deref()
    }

    /// RGB8 rendering stored when the rig was built (absent after edits).
    pub fn stored_reconstruction(&self) -> Option<&[u8]> {
        self.reconstruction.as_deref()
    }

    /// The rig with `edits` applied in order. Subdivision edits remap the
    /// sail's index map.
    pub fn edited(&self, edits: &[EditDelta]) -> Result<SailRig, RigModelError> {
        let mut rig = self.clone();
        if !edits.is_empty() {
            rig.reconstruction = None;
        }
        for edit in edits {
            let count = rig.layers.len();
            let layer = rig.layers.get(edit.sail).ok_or(RigModelError::EditSail { sail: edit.sail, count })?;
            let next = edit.apply(&layer.sail)?;
            if next.subdivision() != layer.sail.subdivision() {
                rig = remap_subdivision(&rig, edit.sail, next.subdivision())?;
            }
            rig.layers[edit.sail].sail = next;
        }
        Ok(rig)
    }

    /// `Σ_i (A_i / 255) · C_i[index_i]` with the current sails decoded
    /// clamped; unmapped pixels take the source color.
    pub fn render(&self) -> Raster {
        let palettes: Vec<Vec<Rgb>> = self
            .layers
            .iter()
            .map(|l| Decoder::new(l.sail.subdivision(), true).decode_colors(&l.sail, true))
            .collect();
        let p = self.width * self.height;
        let mut out = vec![[0.0; 3]; p];
        for (px, o) in out.iter_mut().enumerate() {
            for (layer, pal) in self.layers.iter().zip(&palettes) {
                let a = f64::from(layer.alpha[px]) / 255.0;
                let idx = layer.indices[px];
                let c = if idx == UNMAPPED {
                    let src = self.source.as_ref().expect("validated: unmapped pixels imply a source");
                    [0, 1, 2].map(|ch| f64::from(src[3 * px + ch]) / 255.0)
                } else {
                    pal[idx as usize]
                };
                for ch in 0..3 {
                    o[ch] += a * c[ch];
                }
            }
        }
        Raster::new(self.width, self.height, out).expect("rig dimensions are nonzero")
    }

    /// 8-bit rendering (clamp, round half away from zero).
    pub fn render_rgb8(&self) -> Vec<u8> {
        self.render().to_rgb8_bytes()
    }
}

/// Recolors the rig after `edits`, with indices frozen.
pub fn recolor(rig: &SailRig, edits: &[EditDelta]) -> Result<Raster, RigModelError> {
    Ok(rig.edited(edits)?.render())
}

/// Old-index → new-index table snapping each expanded grid point of
/// subdivision `from` to its nearest expanded grid point of `to`
/// (barycentric Euclidean distance, ties → lowest index).
pub fn snap_table(from: u32, to: u32) -> Result<Vec<u16>, SailError> {
    let old = enumerate_grid(from, true)?;
    let new = enumerate_grid(to, true)?;
    Ok(old
        .iter()
        .map(|o| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, n) in new.iter().enumerate() {
                let d = (0..3).map(|c| (o.bary[c] - n.bary[c]).powi(2)).sum::<f64>();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best as u16
        })
        .collect())
}

/// Changes the subdivision of one sail and snaps its index map.
pub fn remap_subdivision(rig: &SailRig, sail: usize, new_s: u32) -> Result<SailRig, RigModelError> {
    let count = rig.layers.len();
    let layer = rig.layers.get(sail).ok_or(RigModelError::EditSail { sail, count })?;
    check_subdivision(new_s)?;
    let next = layer.sail.with_subdivision(new_s).map_err(|source| RigModelError::EditField {
        sail,
        field: "subdivision".into(),
        source,
    })?;
    let table = snap_table(layer.sail.subdivision(), new_s).map_err(|source| RigModelError::Sail { sail, source })?;
    let indices = layer.indices.iter().map(|&i| if i == UNMAPPED { UNMAPPED } else { table[i as usize] }).collect();
    let mut out = rig.clone();
    out.reconstruction = None;
    out.layers[sail] = RigLayer { sail: next, alpha: layer.alpha.clone(), indices };
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    width: usize,
    height: usize,
    image_sha256: String,
    sails: Vec<ManifestSail>,
    fit_config_digest: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestSail {
    vertices: [Rgb; 3],
    focus: [f64; 2],
    wind: f64,
    subdivision: u32,
    alpha_file: String,
    index_file: String,
}

fn alpha_file(i: usize) -> String {
    format!("alpha_{i}.png")
}

fn index_file(i: usize) -> String {
    format!("index_{i}.png")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RigModelError + '_ {
    move |source| RigModelError::Io { path: path.to_path_buf(), source }
}

fn img_err(path: &Path) -> impl FnOnce(image::ImageError) -> RigModelError + '_ {
    move |source| RigModelError::Image { path: path.to_path_buf(), source }
}

/// Writes the bundle into directory `dir` (created if needed).
pub fn save_rig(rig: &SailRig, dir: impl AsRef<Path>) -> Result<(), RigModelError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (w, h) = (rig.width, rig.height);
    let mut sails = Vec::with_capacity(rig.layers.len());
    for (i, layer) in rig.layers.iter().enumerate() {
        let (af, xf) = (alpha_file(i), index_file(i));
        let ap = dir.join(&af);
        save_gray8(&ap, w, h, &layer.alpha).map_err(img_err(&ap))?;
        let xp = dir.join(&xf);
        save_gray16(&xp, w, h, &layer.indices).map_err(img_err(&xp))?;
        let s = &layer.sail;
        let (pu, pv) = s.focus();
        sails.push(ManifestSail {
            vertices: *s.vertices(),
            focus: [pu, pv],
            wind: s.wind(),
            subdivision: s.subdivision(),
            alpha_file: af,
            index_file: xf,
        });
    }
    if let Some(src) = &rig.source {
        let sp = dir.join(SOURCE_FILE);
        let img = image::RgbImage::from_raw(w as u32, h as u32, src.clone()).expect("source length validated");
        img.save(&sp).map_err(img_err(&sp))?;
    }
    if let Some(rec) = &rig.reconstruction {
        let rp = dir.join(RECONSTRUCTION_FILE);
        let img = image::RgbImage::from_raw(w as u32, h as u32, rec.clone()).expect("reconstruction length validated");
        img.save(&rp).map_err(img_err(&rp))?;
    }
    let manifest = Manifest {
        version: RIG_VERSION,
        width: w,
        height: h,
        image_sha256: rig.image_sha256.clone(),
        sails,
        fit_config_digest: rig.fit_config_digest.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    let mp = dir.join(MANIFEST_FILE);
    fs::write(&mp, text).map_err(io_err(&mp))
}

fn require(path: PathBuf) -> Result<PathBuf, RigModelError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(RigModelError::MissingFile(path))
    }
}

/// Reads a bundle written by [`save_rig`] (or any producer of the same
/// format).
pub fn load_rig(dir: impl AsRef<Path>) -> Result<SailRig, RigModelError> {
    let dir = dir.as_ref();
    let mp = require(dir.join(MANIFEST_FILE))?;
    let text = fs::read_to_string(&mp).map_err(io_err(&mp))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(RIG_VERSION) => {}
        Some(v) => return Err(RigModelError::Version(v)),
        None => return Err(RigModelError::Version(0)),
    }
    let manifest: Manifest = serde_json::from_value(value)?;
    let (w, h) = (manifest.width, manifest.height);
    let mut layers = Vec::with_capacity(manifest.sails.len());
    for (i, ms) in manifest.sails.iter().enumerate() {
        let sail = ColorSail::new(ms.vertices, (ms.focus[0], ms.focus[1]), ms.wind, ms.subdivision)
            .map_err(|source| RigModelError::Sail { sail: i, source })?;
        let ap = require(dir.join(&ms.alpha_file))?;
        let (aw, ah, alpha) = load_gray8(&ap).map_err(img_err(&ap))?;
        if (aw, ah) != (w, h) {
            return Err(RigModelError::Dimensions { sail: i, file: ms.alpha_file.clone(), expected: (w, h), got: (aw, ah) });
        }
        let xp = require(dir.join(&ms.index_file))?;
        let (xw, xh, indices) = load_gray16(&xp).map_err(img_err(&xp))?;
        if (xw, xh) != (w, h) {
            return Err(RigModelError::Dimensions { sail: i, file: ms.index_file.clone(), expected: (w, h), got: (xw, xh) });
        }
        layers.push(RigLayer { sail, alpha, indices });
    }
    let sp = dir.join(SOURCE_FILE);
    let source = if sp.is_file() {
        let img = image::open(&sp).map_err(img_err(&sp))?.to_rgb8();
        if (img.width() as usize, img.height() as usize) != (w, h) {
            return Err(RigModelError::SourceDimensions {
                expected: (w, h),
                got: (img.width() as usize, img.height() as usize),
            });
        }
        let bytes = img.into_raw();
        let got = sha256_hex(&bytes);
        if got != manifest.image_sha256 {
            return Err(RigModelError::SourceHash { expected: manifest.image_sha256, got });
        }
        Some(bytes)
    } else {
        None
    };
    let rp = dir.join(RECONSTRUCTION_FILE);
    let reconstruction = if rp.is_file() {
        let img = image::open(&rp).map_err(img_err(&rp))?.to_rgb8();
        if (img.width() as usize, img.height() as usize) != (w, h) {
            return Err(RigModelError::SourceDimensions {
                expected: (w, h),
                got: (img.width() as usize, img.height() as usize),
            });
        }
        Some(img.into_raw())
    } else {
        None
    };
    let rig = SailRig {
        width: w,
        height: h,
        image_sha256: manifest.image_sha256,
        fit_config_digest: manifest.fit_config_digest,
        layers,
        source,
        reconstruction,
    };
    rig.validate()?;
    Ok(rig)
}

/// Parses an edits file: a JSON array of [`EditDelta`].
pub fn parse_edits(text: &str) -> Result<Vec<EditDelta>, serde_json::Error> {
    serde_json::from_str(text)
}
