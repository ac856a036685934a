//! Class-conditional online augmentation.
//!
//! Only labels in [`TrainConfig::augment_classes`] are perturbed. Each
//! transform is drawn independently; geometric transforms resample with
//! bilinear interpolation and fill uncovered pixels with black.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use crate::corpus::Label;
use crate::imgproc::GrayImage;

/// Magnitudes and probabilities of the augmentation transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Probability of each non-flip transform being part of the draw.
    pub apply_prob: f64,
    pub flip_prob: f64,
    /// Variance of additive noise on [0, 1]-scaled intensities.
    pub noise_variance: f64,
    /// Rotation angle is uniform in `[-rotation_degrees, rotation_degrees]`.
    pub rotation_degrees: f64,
    /// Elastic displacement scale and smoothing, in pixels of a 224 grid.
    pub elastic_alpha: f64,
    pub elastic_sigma: f64,
    /// Zoom factor is uniform in `[1 - scale_range, 1 + scale_range]`.
    pub scale_range: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            apply_prob: 0.5,
            flip_prob: 0.5,
            noise_variance: 0.015,
            rotation_degrees: 10.0,
            elastic_alpha: 34.0,
            elastic_sigma: 4.0,
            scale_range: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentOp {
    HorizontalFlip,
    Rotate { degrees: f64 },
    Scale { factor: f64 },
    Elastic { alpha: f64, sigma: f64 },
    GaussianNoise { variance: f64 },
}

/// Draws the transforms for one sample, in application order.
pub fn sample_ops(cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<AugmentOp> {
    let mut ops = Vec::new();
    if rng.random::<f64>() < cfg.flip_prob {
        ops.push(AugmentOp::HorizontalFlip);
    }
    if rng.random::<f64>() < cfg.apply_prob {
        let d = cfg.rotation_degrees;
        ops.push(AugmentOp::Rotate { degrees: rng.random_range(-d..=d) });
    }
    if rng.random::<f64>() < cfg.apply_prob {
        let s = cfg.scale_range;
        ops.push(AugmentOp::Scale { factor: rng.random_range(1.0 - s..=1.0 + s) });
    }
    if rng.random::<f64>() < cfg.apply_prob {
        ops.push(AugmentOp::Elastic { alpha: cfg.elastic_alpha, sigma: cfg.elastic_sigma });
    }
    if rng.random::<f64>() < cfg.apply_prob {
        ops.push(AugmentOp::GaussianNoise { variance: cfg.noise_variance });
    }
    ops
}

/// Seeded augmentation of one image. Labels outside `cfg.augment_classes`
/// pass through unchanged.
pub fn augment(img: &GrayImage, label: Label, cfg: &TrainConfig, seed: u64) -> GrayImage {
    if !cfg.augment_classes.contains(&label) {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = sample_ops(&cfg.augmentation, &mut rng);
    apply_ops(img, &ops, &mut rng)
}

pub fn apply_ops(img: &GrayImage, ops: &[AugmentOp], rng: &mut impl Rng) -> GrayImage {
    let mut out = img.clone();
    for &op in ops {
        out = apply_op(&out, op, rng);
    }
    out
}

pub fn apply_op(img: &GrayImage, op: AugmentOp, rng: &mut impl Rng) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    match op {
        AugmentOp::HorizontalFlip => GrayImage::from_fn(w, h, |r, c| img.get(r, w - 1 - c)),
        AugmentOp::GaussianNoise { variance } => {
            let normal = Normal::new(0.0, variance.sqrt()).expect("finite variance");
            let vals: Vec<f64> = img.to_unit().into_iter().map(|v| v + normal.sample(rng)).collect();
            GrayImage::from_unit(w, h, &vals).expect("same dims")
        }
        AugmentOp::Rotate { degrees } => {
            let (s, c) = degrees.to_radians().sin_cos();
            // Inverse map: rotate destination coordinates by -angle.
            affine(img, [c, s, -s, c])
        }
        AugmentOp::Scale { factor } => affine(img, [1.0 / factor, 0.0, 0.0, 1.0 / factor]),
        AugmentOp::Elastic { alpha, sigma } => elastic(img, alpha, sigma, rng),
    }
}

fn sample_bilinear(src: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    if x < -0.5 || y < -0.5 || x > w as f64 - 0.5 || y > h as f64 - 0.5 {
        return 0.0;
    }
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
    let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Resamples with the inverse linear map `m` (row-major 2x2, acting on
/// `(x, y)` offsets from the image center).
fn affine(img: &GrayImage, m: [f64; 4]) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let src = img.to_unit();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let dx = c as f64 - cx;
            let dy = r as f64 - cy;
            let sx = m[0] * dx + m[1] * dy + cx;
            let sy = m[2] * dx + m[3] * dy + cy;
            out.push(sample_bilinear(&src, w, h, sx, sy));
        }
    }
    GrayImage::from_unit(w, h, &out).expect("same dims")
}

fn gaussian_blur(field: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / norm).collect();
    let pass = |input: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        for r in 0..h as isize {
            for c in 0..w as isize {
                let mut acc = 0.0;
                for (ki, k) in kernel.iter().enumerate() {
                    let off = ki as isize - radius;
                    // Reflect at the border.
                    let (rr, cc) = if horizontal { (r, reflect(c + off, w)) } else { (reflect(r + off, h), c) };
                    acc += k * input[rr as usize * w + cc as usize];
                }
                out[r as usize * w + c as usize] = acc;
            }
        }
        out
    };
    pass(&pass(field, true), false)
}

fn reflect(i: isize, n: usize) -> isize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    if m < n {
        m
    } else {
        period - m
    }
}

/// Random displacement fields, smoothed by a Gaussian of width `sigma` and
/// scaled by `alpha`; both are given for a 224-pixel grid and rescaled to the
/// image width.
fn elastic(img: &GrayImage, alpha: f64, sigma: f64, rng: &mut impl Rng) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let grid = w as f64 / 224.0;
    let (alpha, sigma) = (alpha * grid, (sigma * grid).max(0.5));
    let field = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
        let raw: Vec<f64> = (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        gaussian_blur(&raw, w, h, sigma).into_iter().map(|v| v * alpha).collect()
    };
    let dx = field(rng);
    let dy = field(rng);
    let src = img.to_unit();
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            out.push(sample_bilinear(&src, w, h, c as f64 + dx[i], r as f64 + dy[i]));
        }
    }
    GrayImage::from_unit(w, h, &out).expect("same dims")
}
