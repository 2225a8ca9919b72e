//! Minimal RGB raster with `f64` channels in [0, 1] plus PNG I/O.

use std::path::Path;

use image::{imageops::FilterType, ImageBuffer, Luma, Rgb as ImgRgb, RgbImage};
use thiserror::Error;

use crate::sail::Rgb;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image I/O error for {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("raster dimensions {width}x{height} do not match {len} pixels")]
    Dimensions { width: usize, height: usize, len: usize },
    #[error("empty raster")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self, RasterError> {
        if width * height != pixels.len() {
            return Err(RasterError::Dimensions { width, height, len: pixels.len() });
        }
        if pixels.is_empty() {
            return Err(RasterError::Empty);
        }
        Ok(Raster { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        Raster { width, height, pixels: vec![color; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Raster { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        self.pixels[y * self.width + x] = c;
    }

    /// Crops the rectangle `[x0, x0 + w) x [y0, y0 + h)`, clipped to the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Raster {
        let x1 = (x0 + w).min(self.width);
        let y1 = (y0 + h).min(self.height);
        Raster::from_fn(x1 - x0, y1 - y0, |x, y| self.get(x0 + x, y0 + y))
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let pixels = img
            .pixels()
            .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
            .collect();
        Raster { width: img.width() as usize, height: img.height() as usize, pixels }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for (dst, src) in img.pixels_mut().zip(&self.pixels) {
            *dst = ImgRgb(quantize_rgb(*src));
        }
        img
    }

    /// Raw 8-bit RGB bytes after quantization.
    pub fn to_rgb8_bytes(&self) -> Vec<u8> {
        self.pixels.iter().flat_map(|&c| quantize_rgb(c)).collect()
    }

    /// Loads any PNG (gray, RGB, RGBA; alpha is dropped).
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| RasterError::Image {
            path: path.display().to_string(),
            source,
        })?;
        let raster = Raster::from_rgb8(&img.to_rgb8());
        if raster.is_empty() {
            return Err(RasterError::Empty);
        }
        Ok(raster)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let path = path.as_ref();
        self.to_rgb8().save(path).map_err(|source| RasterError::Image {
            path: path.display().to_string(),
            source,
        })
    }

    /// Downscales so the longest side is at most `max_side`, quantizing to
    /// 8 bits on the way. Returns a clone when already small enough.
    pub fn fit_within(&self, max_side: usize) -> Raster {
        let longest = self.width.max(self.height);
        if longest <= max_side {
            return self.clone();
        }
        let scale = max_side as f64 / longest as f64;
        let w = ((self.width as f64 * scale).round() as u32).max(1);
        let h = ((self.height as f64 * scale).round() as u32).max(1);
        let resized = image::imageops::resize(&self.to_rgb8(), w, h, FilterType::Triangle);
        Raster::from_rgb8(&resized)
    }
}

/// Channel quantization shared by every 8-bit output: clamp, scale, round
/// half away from zero.
pub fn quantize_channel(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn quantize_rgb(c: Rgb) -> [u8; 3] {
    [quantize_channel(c[0]), quantize_channel(c[1]), quantize_channel(c[2])]
}

/// Bilinear resampling of a single-channel plane with pixel-center alignment.
pub fn resize_plane_bilinear(
    src: &[f64],
    width: usize,
    height: usize,
    new_width: usize,
    new_height: usize,
) -> Vec<f64> {
    if width == new_width && height == new_height {
        return src.to_vec();
    }
    let sx = width as f64 / new_width as f64;
    let sy = height as f64 / new_height as f64;
    let mut out = Vec::with_capacity(new_width * new_height);
    for y in 0..new_height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(height - 1);
        let ty = fy - y0 as f64;
        for x in 0..new_width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(width - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * width + x0] * (1.0 - tx) + src[y0 * width + x1] * tx;
            let bottom = src[y1 * width + x0] * (1.0 - tx) + src[y1 * width + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

pub fn save_gray8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<(), image::ImageError> {
    let img: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width as u32, height as u32, data.to_vec()).expect("buffer size checked by caller");
    img.save(path)
}

pub fn save_gray16(path: &Path, width: usize, height: usize, data: &[u16]) -> Result<(), image::ImageError> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, data.to_vec()).expect("buffer size checked by caller");
    img.save(path)
}

pub fn load_gray8(path: &Path) -> Result<(usize, usize, Vec<u8>), image::ImageError> {
    let img = image::open(path)?.to_luma8();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}

pub fn load_gray16(path: &Path) -> Result<(usize, usize, Vec<u16>), image::ImageError> {
    let img = image::open(path)?.to_luma16();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}
