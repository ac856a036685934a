//! Projects three Gaussian clusters to 2-D with t-SNE and writes the points
//! and a scatter plot.
//!
//! `cargo run --example embedding -- [points_per_cluster] [dims]`

use cxrnet::corpus::{ImageRecord, Label, Projection, Sensor, Sex, Source};
use cxrnet::evalkit::scatter_svg;
use cxrnet::explain::{embedding_points, project_2d, write_points_csv, TsneConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let per: usize = args.first().map_or(Ok(40), |s| s.parse())?;
    let dims: usize = args.get(1).map_or(Ok(16), |s| s.parse())?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0, 1.0)?;
    let mut features = Vec::new();
    let mut records = Vec::new();
    for label in Label::ALL {
        for i in 0..per {
            let shift = 6.0 * label.index() as f64;
            features.push((0..dims).map(|d| noise.sample(&mut rng) + if d % 3 == label.index() { shift } else { 0.0 }).collect());
            records.push(ImageRecord {
                record_id: format!("{label}-{i}"),
                image_path: "none.png".into(),
                label,
                patient_id: format!("{label}-{i}"),
                source: Source::Synthetic,
                projection: Projection::PA,
                sensor: Sensor::DX,
                sex: Sex::F,
                age: None,
            });
        }
    }
    let emb = project_2d(&features, &TsneConfig { perplexity: 15.0, ..Default::default() })?;
    println!("KL divergence {:.4}", emb.kl_history.last().copied().unwrap_or(f64::NAN));
    let refs: Vec<&ImageRecord> = records.iter().collect();
    let points = embedding_points(&emb, &refs);
    write_points_csv("embedding_points.csv".as_ref(), &points)?;
    std::fs::write("embedding.svg", scatter_svg("t-SNE", &points, |p| p.label.to_string()))?;
    println!("wrote embedding_points.csv and embedding.svg");
    Ok(())
}
