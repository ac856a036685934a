//! Synthetic chest-radiograph phantoms with known lung masks.
//!
//! Two bright ellipses on a dark, noisy ground stand in for the lung fields.
//! Pneumonia phantoms carry one large focal opacity; COVID-19 phantoms carry
//! several small peripheral patches. Controls carry neither.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{self, CorpusError, ImageRecord, Label, Projection, Sensor, Sex, Source};
use crate::imgproc::{GrayImage, LungMask};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub width: usize,
    pub height: usize,
    /// Mean lung intensity (0..65535 scale).
    pub lung_level: f64,
    pub background_level: f64,
    pub noise_std: f64,
    /// Extra lung brightness per class index; 0 keeps classes apart only by
    /// texture.
    pub class_brightness: f64,
    /// Fraction of patients contributing a second image.
    pub repeat_patient_fraction: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            width: 256,
            height: 256,
            lung_level: 34000.0,
            background_level: 9000.0,
            noise_std: 2500.0,
            class_brightness: 0.0,
            repeat_patient_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: GrayImage,
    pub mask: LungMask,
    pub label: Label,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
}

impl Ellipse {
    fn norm(&self, x: f64, y: f64) -> f64 {
        ((x - self.cx) / self.ax).powi(2) + ((y - self.cy) / self.ay).powi(2)
    }
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    x: f64,
    y: f64,
    sigma: f64,
    amplitude: f64,
}

#[derive(Debug, Clone)]
pub struct PhantomGenerator {
    cfg: PhantomConfig,
}

impl PhantomGenerator {
    pub fn new(cfg: PhantomConfig) -> Self {
        assert!(cfg.width >= 16 && cfg.height >= 16, "phantoms need at least 16x16 pixels");
        PhantomGenerator { cfg }
    }

    pub fn config(&self) -> &PhantomConfig {
        &self.cfg
    }

    /// Deterministic phantom for `(label, seed)`.
    pub fn generate(&self, label: Label, seed: u64) -> Phantom {
        let (w, h) = (self.cfg.width as f64, self.cfg.height as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "phantom", label.index() as u64, 0));
        let mut jitter = |s: f64| 1.0 + rng.random_range(-s..s);
        let lungs = [
            Ellipse { cx: 0.31 * w * jitter(0.03), cy: 0.5 * h * jitter(0.03), ax: 0.155 * w * jitter(0.05), ay: 0.33 * h * jitter(0.05) },
            Ellipse { cx: 0.69 * w * jitter(0.03), cy: 0.5 * h * jitter(0.03), ax: 0.155 * w * jitter(0.05), ay: 0.33 * h * jitter(0.05) },
        ];
        let blobs = self.blobs(label, &lungs, &mut rng);
        let level = self.cfg.lung_level + self.cfg.class_brightness * label.index() as f64;
        let noise = Normal::new(0.0, self.cfg.noise_std.max(1e-9)).expect("finite std");

        let (wi, hi) = (self.cfg.width, self.cfg.height);
        let mut pixels = Vec::with_capacity(wi * hi);
        let mut bits = Vec::with_capacity(wi * hi);
        for r in 0..hi {
            for c in 0..wi {
                let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
                let inside = lungs.iter().any(|e| e.norm(x, y) <= 1.0);
                // Soft vertical gradient on the ground, darker toward the bottom.
                let mut v = self.cfg.background_level * (1.1 - 0.2 * y / h);
                if inside {
                    v = level;
                    for b in &blobs {
                        let d2 = (x - b.x).powi(2) + (y - b.y).powi(2);
                        v += b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
                    }
                }
                v += noise.sample(&mut rng);
                pixels.push(v.round().clamp(0.0, 65535.0) as u16);
                bits.push(inside);
            }
        }
        Phantom {
            image: GrayImage::new(wi, hi, pixels).expect("dims"),
            mask: LungMask::new(wi, hi, bits).expect("dims"),
            label,
        }
    }

    fn blobs(&self, label: Label, lungs: &[Ellipse; 2], rng: &mut ChaCha8Rng) -> Vec<Blob> {
        let scale = self.cfg.width.min(self.cfg.height) as f64;
        let point_in = |e: &Ellipse, radius: f64, angle: f64| Blob {
            x: e.cx + radius * e.ax * angle.cos(),
            y: e.cy + radius * e.ay * angle.sin(),
            sigma: 0.0,
            amplitude: 0.0,
        };
        match label {
            Label::Control => Vec::new(),
            Label::Pneumonia => {
                let e = &lungs[rng.random_range(0..2)];
                let b = point_in(e, rng.random_range(0.0..0.4), rng.random_range(0.0..std::f64::consts::TAU));
                vec![Blob { sigma: 0.07 * scale, amplitude: 16000.0, ..b }]
            }
            Label::Covid19 => (0..4)
                .map(|i| {
                    let e = &lungs[i % 2];
                    let b = point_in(e, rng.random_range(0.7..0.9), rng.random_range(0.0..std::f64::consts::TAU));
                    Blob { sigma: 0.03 * scale, amplitude: 14000.0, ..b }
                })
                .collect(),
        }
    }
}

/// Writes `per_class` phantoms per class under `dir` (images/, masks/ and a
/// manifest.csv) and returns the records in manifest order.
pub fn write_corpus(dir: &Path, per_class: usize, seed: u64, cfg: &PhantomConfig) -> Result<Vec<ImageRecord>, CorpusError> {
    let gen = PhantomGenerator::new(cfg.clone());
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let records = corpus_records(dir, per_class, seed, cfg);
    for (i, rec) in records.iter().enumerate() {
        let ph = gen.generate(rec.label, derive_seed(seed, "phantom-image", i as u64, 0));
        let io = |e: crate::imgproc::ImgError| CorpusError::Io(std::io::Error::other(e.to_string()));
        ph.image.save_png(&rec.image_path).map_err(io)?;
        ph.mask.save_png(&mask_path(dir, &rec.record_id)).map_err(io)?;
    }
    corpus::write_manifest(&dir.join("manifest.csv"), &records)?;
    Ok(records)
}

pub fn mask_path(dir: &Path, record_id: &str) -> PathBuf {
    dir.join("masks").join(format!("{record_id}.png"))
}

/// In-memory phantoms in the same order and with the same pixels as
/// [`write_corpus`].
pub fn generate_set(per_class: usize, seed: u64, cfg: &PhantomConfig) -> Vec<(ImageRecord, Phantom)> {
    let gen = PhantomGenerator::new(cfg.clone());
    corpus_records(Path::new("."), per_class, seed, cfg)
        .into_iter()
        .enumerate()
        .map(|(i, rec)| {
            let ph = gen.generate(rec.label, derive_seed(seed, "phantom-image", i as u64, 0));
            (rec, ph)
        })
        .collect()
}

pub fn corpus_records(dir: &Path, per_class: usize, seed: u64, cfg: &PhantomConfig) -> Vec<ImageRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "phantom-meta", 0, 0));
    let mut records = Vec::with_capacity(per_class * 3);
    let mut patient = 0usize;
    for label in Label::ALL {
        let mut made = 0;
        while made < per_class {
            let shots = if made + 1 < per_class && rng.random_bool(cfg.repeat_patient_fraction) { 2 } else { 1 };
            let sex = if rng.random_bool(0.5) { Sex::M } else { Sex::F };
            let age = rng.random_range(18..90) as f64;
            for _ in 0..shots {
                let record_id = format!("ph{:04}", records.len());
                records.push(ImageRecord {
                    image_path: dir.join("images").join(format!("{record_id}.png")),
                    record_id,
                    label,
                    patient_id: format!("pt{patient:04}"),
                    source: Source::Synthetic,
                    projection: if rng.random_bool(0.5) { Projection::AP } else { Projection::PA },
                    sensor: if rng.random_bool(0.5) { Sensor::CR } else { Sensor::DX },
                    sex,
                    age: Some(age),
                });
                made += 1;
            }
            patient += 1;
        }
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let gen = PhantomGenerator::new(PhantomConfig::default());
        let a = gen.generate(Label::Pneumonia, 9);
        let b = gen.generate(Label::Pneumonia, 9);
        assert_eq!(a.image, b.image);
        assert!(a.mask.count() >= 10_000, "{}", a.mask.count());
        assert_ne!(gen.generate(Label::Pneumonia, 10).image, a.image);
    }

    #[test]
    fn corpus_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PhantomConfig { width: 64, height: 64, ..Default::default() };
        let recs = write_corpus(dir.path(), 4, 3, &cfg).unwrap();
        assert_eq!(recs.len(), 12);
        let loaded = corpus::load_manifest(&dir.path().join("manifest.csv")).unwrap();
        assert_eq!(loaded, recs);
        let set = generate_set(4, 3, &cfg);
        let img = GrayImage::load_png(&recs[5].image_path).unwrap();
        assert_eq!(img, set[5].1.image);
        let mask = LungMask::load_png(&mask_path(dir.path(), &recs[5].record_id)).unwrap();
        assert_eq!(mask, set[5].1.mask);
    }
}
