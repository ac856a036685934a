//! Grad-CAM heat maps, penultimate-layer features and their 2-D t-SNE
//! projection.

mod gradcam;
mod tsne;

pub use gradcam::{grad_cam, grad_cam_volume, penultimate_features, GradCam, HeatMap};
pub use tsne::{project_2d, Embedding, TsneConfig, TsneError};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ImageRecord, Label, Source};
use crate::imgproc::{self, GrayImage, ImgError};

pub const OVERLAY_OPACITY: f64 = 0.4;

/// Viridis sampled at nine evenly spaced points.
const VIRIDIS: [[f64; 3]; 9] = [
    [68.0, 1.0, 84.0],
    [71.0, 44.0, 122.0],
    [59.0, 81.0, 139.0],
    [44.0, 113.0, 142.0],
    [33.0, 144.0, 141.0],
    [39.0, 173.0, 129.0],
    [92.0, 200.0, 99.0],
    [170.0, 220.0, 50.0],
    [253.0, 231.0, 37.0],
];

/// Viridis color for `t` in [0, 1], linearly interpolated.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (t.floor() as usize).min(VIRIDIS.len() - 2);
    let f = t - i as f64;
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = (VIRIDIS[i][c] * (1.0 - f) + VIRIDIS[i + 1][c] * f).round() as u8;
    }
    out
}

/// RGB overlay of `heat` on `img` (resized to the heat-map dims), row-major
/// `[r, g, b]` triples.
pub fn overlay_rgb(img: &GrayImage, heat: &HeatMap) -> Vec<u8> {
    let base = if (img.width(), img.height()) == (heat.width, heat.height) {
        img.clone()
    } else {
        imgproc::resize(img, heat.width, heat.height)
    };
    let mut out = Vec::with_capacity(heat.width * heat.height * 3);
    for (&p, &h) in base.pixels().iter().zip(&heat.values) {
        let gray = p as f64 / 257.0;
        for c in colormap(h) {
            out.push(((1.0 - OVERLAY_OPACITY) * gray + OVERLAY_OPACITY * c as f64).round() as u8);
        }
    }
    out
}

pub fn save_overlay(path: &Path, img: &GrayImage, heat: &HeatMap) -> Result<(), ImgError> {
    let buf = image::RgbImage::from_raw(heat.width as u32, heat.height as u32, overlay_rgb(img, heat))
        .ok_or_else(|| ImgError::Invalid("overlay buffer size".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// One projected record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    pub x: f64,
    pub y: f64,
    pub record_id: String,
    pub label: Label,
    pub source: Source,
}

pub fn embedding_points(embedding: &Embedding, records: &[&ImageRecord]) -> Vec<EmbeddingPoint> {
    assert_eq!(embedding.coords.len(), records.len(), "one record per embedded point");
    embedding
        .coords
        .iter()
        .zip(records)
        .map(|(c, r)| EmbeddingPoint {
            x: c[0],
            y: c[1],
            record_id: r.record_id.clone(),
            label: r.label,
            source: r.source,
        })
        .collect()
}

/// `x,y,record_id,label,source` rows.
pub fn write_points_csv(path: &Path, points: &[EmbeddingPoint]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "record_id", "label", "source"])?;
    for p in points {
        w.write_record([&p.x.to_string(), &p.y.to_string(), &p.record_id, p.label.as_str(), p.source.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points_csv(path: &Path) -> Result<Vec<EmbeddingPoint>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}
