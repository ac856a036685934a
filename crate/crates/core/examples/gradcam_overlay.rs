//! Trains a small classifier to spot a bright square and writes Grad-CAM
//! overlays for a few test images.
//!
//! `cargo run --example gradcam_overlay -- [out_dir]`

use std::path::PathBuf;

use cxrnet::corpus::Label;
use cxrnet::explain::{grad_cam_volume, save_overlay};
use cxrnet::imgproc::{normalize_volume, GrayImage};
use cxrnet::model::{build_network, train, LabeledImage, NetworkConfig, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIDE: usize = 48;
const SQUARE: usize = 14;

fn image(rng: &mut ChaCha8Rng, square: Option<(usize, usize)>) -> GrayImage {
    GrayImage::from_fn(SIDE, SIDE, |r, c| {
        let lit = square.is_some_and(|(r0, c0)| (r0..r0 + SQUARE).contains(&r) && (c0..c0 + SQUARE).contains(&c));
        (if lit { 45000 } else { 15000 }) + rng.random_range(0..6000)
    })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "gradcam_overlay".into()));
    std::fs::create_dir_all(&out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let corner = |rng: &mut ChaCha8Rng| (rng.random_range(0..=SIDE - SQUARE), rng.random_range(0..=SIDE - SQUARE));
    let data: Vec<LabeledImage> = (0..60)
        .map(|i| {
            if i % 2 == 0 {
                let sq = corner(&mut rng);
                LabeledImage { image: image(&mut rng, Some(sq)), label: Label::Covid19 }
            } else {
                LabeledImage { image: image(&mut rng, None), label: Label::Control }
            }
        })
        .collect();
    let net_cfg = NetworkConfig {
        backbone_channels: vec![8, 16],
        dense_sizes: [16, 8],
        input_side: SIDE,
        ..NetworkConfig::compact()
    };
    let cfg = TrainConfig { learning_rate: 1e-3, epochs: 12, batch_size: 8, augment_classes: vec![], ..Default::default() };
    let (net, _) = train(build_network(&net_cfg, 3)?, &data, &data, &cfg)?;

    for i in 0..4 {
        let sq = corner(&mut rng);
        let img = image(&mut rng, Some(sq));
        let cam = grad_cam_volume(&net, &normalize_volume(&img, &cfg.zscore), Label::Covid19)?;
        let path = out.join(format!("square_{i}.png"));
        save_overlay(&path, &img, &cam.heatmap)?;
        let peak = cam.heatmap.values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k).unwrap();
        println!("{}: square at {sq:?}, heat peak at ({}, {})", path.display(), peak / SIDE, peak % SIDE);
    }
    Ok(())
}
