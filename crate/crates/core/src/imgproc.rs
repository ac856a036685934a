//! Pixel-level primitives on 16-bit grayscale rasters.
//!
//! All images are Monochrome2 (larger value = brighter) with 16-bit depth;
//! 8-bit sources are promoted by multiplying by 257.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side of the square network input.
pub const INPUT_SIDE: usize = 224;

#[derive(Debug, Error)]
pub enum ImgError {
    #[error("window width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("equalization region has no foreground pixels")]
    EmptyRegion,
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("image {width}x{height} is smaller than the {side}x{side} crop")]
    ImageTooSmall { width: usize, height: usize, side: usize },
    #[error("expected a {expected}x{expected} image, got {width}x{height}")]
    WrongDimensions { expected: usize, width: usize, height: usize },
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error("unsupported pixel format in {0}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Row-major 16-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u16>) -> Result<Self, ImgError> {
        if width == 0 || height == 0 {
            return Err(ImgError::Invalid(format!("zero-sized image {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(ImgError::Invalid(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u16) -> Self {
        assert!(width > 0 && height > 0, "zero-sized image");
        GrayImage { width, height, pixels: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u16) -> Self {
        assert!(width > 0 && height > 0, "zero-sized image");
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        GrayImage { width, height, pixels }
    }

    /// Builds an image from intensities on the [0, 1] scale (clamped, rounded).
    pub fn from_unit(width: usize, height: usize, values: &[f64]) -> Result<Self, ImgError> {
        let pixels = values.iter().map(|&v| unit_to_u16(v)).collect();
        GrayImage::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u16] {
        &mut self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: u16) {
        self.pixels[row * self.width + col] = v;
    }

    /// Intensities scaled to [0, 1].
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 65535.0).collect()
    }

    pub fn load_png(path: &Path) -> Result<Self, ImgError> {
        let img = image::open(path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let pixels = match img {
            image::DynamicImage::ImageLuma16(buf) => buf.into_raw(),
            image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|p| p as u16 * 257).collect(),
            _ => return Err(ImgError::UnsupportedFormat(path.display().to_string())),
        };
        GrayImage::new(w, h, pixels)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImgError> {
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
                .ok_or_else(|| ImgError::Invalid("buffer size".into()))?;
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

pub(crate) fn unit_to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Binary lung mask; `true` is lung foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LungMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl LungMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, ImgError> {
        if bits.len() != width * height {
            return Err(ImgError::Invalid(format!("{} bits for a {width}x{height} mask", bits.len())));
        }
        Ok(LungMask { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        LungMask { width, height, bits: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        LungMask { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.bits[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// `true` when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &LungMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn iou(&self, other: &LungMask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Writes the mask as an 8-bit PNG (255 = foreground).
    pub fn save_png(&self, path: &Path) -> Result<(), ImgError> {
        let raw: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
            .ok_or_else(|| ImgError::Invalid("buffer size".into()))?;
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Any non-zero pixel is foreground.
    pub fn load_png(path: &Path) -> Result<Self, ImgError> {
        let img = GrayImage::load_png(path)?;
        Ok(LungMask {
            width: img.width,
            height: img.height,
            bits: img.pixels.iter().map(|&p| p > 0).collect(),
        })
    }
}

/// DICOM-style display window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub center: f64,
    pub width: f64,
}

/// Linearly maps `[center - width/2, center + width/2]` onto `[0, 65535]`,
/// clamping outside the window.
pub fn apply_window(raw: &[f64], width: usize, height: usize, window: Window) -> Result<GrayImage, ImgError> {
    if !(window.width > 0.0) {
        return Err(ImgError::NonPositiveWidth(window.width));
    }
    let lower = window.center - window.width / 2.0;
    let pixels = raw
        .iter()
        .map(|&v| (((v - lower) / window.width).clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    GrayImage::new(width, height, pixels)
}

/// Per-record windowing parameters, read from a `{record_id: {center, width}}` JSON file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WindowSidecar(pub HashMap<String, Window>);

impl WindowSidecar {
    pub fn load(path: &Path) -> Result<Self, ImgError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn get(&self, record_id: &str) -> Option<Window> {
        self.0.get(record_id).copied()
    }
}

/// Histogram equalization to the full 16-bit range.
///
/// With a region, the CDF is built over region pixels only and pixels outside
/// the region are left untouched. A region whose pixels all share one value
/// (the CDF denominator is zero) is returned unchanged.
pub fn equalize(img: &GrayImage, region: Option<&LungMask>) -> Result<GrayImage, ImgError> {
    if let Some(mask) = region {
        if mask.width != img.width || mask.height != img.height {
            return Err(ImgError::DimensionMismatch(img.width, img.height, mask.width, mask.height));
        }
        if mask.count() == 0 {
            return Err(ImgError::EmptyRegion);
        }
    }
    let inside = |i: usize| region.map_or(true, |m| m.bits[i]);

    let mut hist = vec![0u64; 65536];
    let mut n_pix = 0u64;
    for (i, &p) in img.pixels.iter().enumerate() {
        if inside(i) {
            hist[p as usize] += 1;
            n_pix += 1;
        }
    }
    let mut cdf = hist;
    let mut acc = 0u64;
    for v in cdf.iter_mut() {
        acc += *v;
        *v = acc;
    }
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    if n_pix == cdf_min {
        return Ok(img.clone());
    }
    let denom = (n_pix - cdf_min) as f64;
    let mut out = img.clone();
    for (i, p) in out.pixels.iter_mut().enumerate() {
        if inside(i) {
            let c = cdf[*p as usize];
            *p = (((c - cdf_min) as f64 / denom) * 65535.0).round() as u16;
        }
    }
    Ok(out)
}

/// Bilinear resampling with half-pixel centers (no antialiasing).
pub fn bilinear_resize(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    let mut out = vec![0.0; dw * dh];
    let sx = sw as f64 / dw as f64;
    let sy = sh as f64 / dh as f64;
    let cols: Vec<(usize, usize, f64)> = (0..dw).map(|x| axis_sample(x, sx, sw)).collect();
    for y in 0..dh {
        let (y0, y1, fy) = axis_sample(y, sy, sh);
        let r0 = &src[y0 * sw..(y0 + 1) * sw];
        let r1 = &src[y1 * sw..(y1 + 1) * sw];
        let row = &mut out[y * dw..(y + 1) * dw];
        for (o, &(x0, x1, fx)) in row.iter_mut().zip(&cols) {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
            *o = top + (bot - top) * fy;
        }
    }
    out
}

fn axis_sample(i: usize, scale: f64, len: usize) -> (usize, usize, f64) {
    let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (pos.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, pos - i0 as f64)
}

/// Resizes `img` to exactly `width` x `height` with bilinear interpolation.
pub fn resize(img: &GrayImage, width: usize, height: usize) -> GrayImage {
    if width == img.width && height == img.height {
        return img.clone();
    }
    let src: Vec<f64> = img.pixels.iter().map(|&p| p as f64).collect();
    let out = bilinear_resize(&src, img.width, img.height, width, height);
    GrayImage {
        width,
        height,
        pixels: out.into_iter().map(|v| v.round().clamp(0.0, 65535.0) as u16).collect(),
    }
}

/// Output size of [`resize_shortest`]: the shorter side becomes `target`, the
/// other keeps the aspect ratio (rounded).
pub fn shortest_side_dims(width: usize, height: usize, target: usize) -> (usize, usize) {
    if width <= height {
        let h = ((height as f64) * target as f64 / width as f64).round() as usize;
        (target, h.max(target))
    } else {
        let w = ((width as f64) * target as f64 / height as f64).round() as usize;
        (w.max(target), target)
    }
}

pub fn resize_shortest(img: &GrayImage, target: usize) -> GrayImage {
    let (w, h) = shortest_side_dims(img.width, img.height, target);
    resize(img, w, h)
}

/// Central `side` x `side` window; the origin is rounded down.
pub fn center_crop(img: &GrayImage, side: usize) -> Result<GrayImage, ImgError> {
    if img.width < side || img.height < side {
        return Err(ImgError::ImageTooSmall { width: img.width, height: img.height, side });
    }
    let x0 = (img.width - side) / 2;
    let y0 = (img.height - side) / 2;
    let mut pixels = Vec::with_capacity(side * side);
    for r in y0..y0 + side {
        pixels.extend_from_slice(&img.pixels[r * img.width + x0..r * img.width + x0 + side]);
    }
    Ok(GrayImage { width: side, height: side, pixels })
}

/// Resize-shortest then center-crop, the network input geometry.
pub fn fit_input(img: &GrayImage) -> GrayImage {
    fit_side(img, INPUT_SIDE)
}

/// Shortest side to `side`, then a central `side x side` crop.
pub fn fit_side(img: &GrayImage, side: usize) -> GrayImage {
    let resized = resize_shortest(img, side);
    center_crop(&resized, side).expect("shortest side equals the crop side")
}

/// Binary dilation with a `k` x `k` all-ones kernel (odd `k`); pixels beyond
/// the border count as background.
pub fn dilate(mask: &LungMask, k: usize) -> LungMask {
    assert!(k % 2 == 1, "kernel side must be odd");
    let r = k / 2;
    let (w, h) = (mask.width, mask.height);
    // Separable: horizontal pass then vertical pass.
    let mut horiz = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            horiz[y * w + x] = mask.bits[y * w + lo..=y * w + hi].iter().any(|&b| b);
        }
    }
    let mut bits = vec![false; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            bits[y * w + x] = (lo..=hi).any(|yy| horiz[yy * w + x]);
        }
    }
    LungMask { width: w, height: h, bits }
}

/// The 5x5 dilation used by the lung-segmentation preprocessing.
pub fn dilate5(mask: &LungMask) -> LungMask {
    dilate(mask, 5)
}

/// Per-channel z-score parameters applied to [0, 1]-scaled intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScoreParams {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ZScoreParams {
    /// ImageNet statistics, kept so the 3-channel input stays compatible with
    /// colour-pretrained backbones.
    pub const IMAGENET: ZScoreParams = ZScoreParams {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };

    pub fn new(mean: [f64; 3], std: [f64; 3]) -> Result<Self, ImgError> {
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(ImgError::Invalid(format!("std components must be positive: {std:?}")));
        }
        Ok(ZScoreParams { mean, std })
    }
}

impl Default for ZScoreParams {
    fn default() -> Self {
        Self::IMAGENET
    }
}

/// Channel-major `c x h x w` block of reals; the common currency of the
/// network code.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Volume { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * height * width, "volume size");
        Volume { channels, height, width, data }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }
}

/// A normalized 3 x 224 x 224 network input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor(Volume);

impl InputTensor {
    pub fn volume(&self) -> &Volume {
        &self.0
    }

    pub fn into_volume(self) -> Volume {
        self.0
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        self.0.plane(c)
    }

    #[cfg(test)]
    pub(crate) fn from_volume_unchecked(v: Volume) -> Self {
        InputTensor(v)
    }
}

/// Replicates the gray channel into three channels, each z-scored with its
/// own constants.
pub fn to_input_tensor(img: &GrayImage, params: &ZScoreParams) -> Result<InputTensor, ImgError> {
    if img.width != INPUT_SIDE || img.height != INPUT_SIDE {
        return Err(ImgError::WrongDimensions { expected: INPUT_SIDE, width: img.width, height: img.height });
    }
    Ok(InputTensor(normalize_volume(img, params)))
}

/// Same normalization as [`to_input_tensor`] without the 224 x 224 check;
/// used by reduced-size models and tests.
pub fn normalize_volume(img: &GrayImage, params: &ZScoreParams) -> Volume {
    let n = img.width * img.height;
    let mut data = Vec::with_capacity(3 * n);
    for c in 0..3 {
        let (m, s) = (params.mean[c], params.std[c]);
        data.extend(img.pixels.iter().map(|&p| (p as f64 / 65535.0 - m) / s));
    }
    Volume::from_vec(3, img.height, img.width, data)
}
