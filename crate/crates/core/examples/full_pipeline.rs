//! Writes a phantom corpus and runs every pipeline stage on it with a small
//! network.
//!
//! `cargo run --example full_pipeline -- [out_dir] [per_class] [raw|crop|segment]`

use std::path::PathBuf;

use cxrnet::lungseg::PreprocessMode;
use cxrnet::model::{NetworkConfig, TrainConfig};
use cxrnet::phantom::{write_corpus, PhantomConfig};
use cxrnet::pipeline::{run, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let root = PathBuf::from(args.first().map_or("full_pipeline", String::as_str));
    let per_class: usize = args.get(1).map_or(Ok(30), |s| s.parse())?;
    let mode: PreprocessMode = args.get(2).map_or(Ok(PreprocessMode::Segment), |s| s.parse())?;

    let data = root.join("data");
    write_corpus(&data, per_class, 1, &PhantomConfig::default())?;
    let cfg = PipelineConfig {
        manifest: data.join("manifest.csv"),
        out: root.join(mode.to_string()),
        mode,
        network: NetworkConfig { input_side: 64, ..NetworkConfig::compact() },
        train: TrainConfig { learning_rate: 1e-3, epochs: 6, batch_size: 8, ..Default::default() },
        ..Default::default()
    };
    let out = cfg.out.clone();
    let summary = run(cfg)?;
    let agg = summary.aggregate.as_ref().unwrap_or(&summary.pooled);
    let std = agg.std.as_deref();
    println!(
        "Acc {:.3} ± {:.3}, BAcc {:.3}, GMR {:.3}; artifacts in {}",
        agg.accuracy,
        std.map_or(0.0, |s| s.accuracy),
        agg.balanced_accuracy,
        agg.gmr,
        out.display()
    );
    Ok(())
}
