//! Trains the compact classifier on in-memory phantoms and reports training
//! accuracy after every epoch.
//!
//! `cargo run --example train_phantoms -- [per_class] [learning_rate] [input_side] [raw|crop|segment]`

use std::time::Instant;

use cxrnet::imgproc::fit_side;
use cxrnet::lungseg::{preprocess, HeuristicSegmenter, PreprocessMode};
use cxrnet::model::{accuracy, build_network, train_with_validator, LabeledImage, NetworkConfig, TrainConfig};
use cxrnet::phantom::{generate_set, PhantomConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let per_class: usize = args.first().map_or(Ok(20), |s| s.parse())?;
    let mut cfg = TrainConfig::default();
    if let Some(lr) = args.get(1) {
        cfg.learning_rate = lr.parse()?;
    }
    let mut net_cfg = NetworkConfig::compact();
    if let Some(side) = args.get(2) {
        net_cfg.input_side = side.parse()?;
    }
    let mode: PreprocessMode = args.get(3).map_or(Ok(PreprocessMode::Segment), |s| s.parse())?;

    let seg = HeuristicSegmenter::default();
    let data: Vec<LabeledImage> = generate_set(per_class, 7, &PhantomConfig::default())
        .into_iter()
        .map(|(rec, p)| {
            let img = preprocess(&p.image, mode, &seg).expect("lungs found");
            LabeledImage { image: fit_side(&img, net_cfg.input_side), label: rec.label }
        })
        .collect();

    let start = Instant::now();
    let net = build_network(&net_cfg, 1)?;
    let (net, history) = train_with_validator(net, &data, &cfg, |n| {
        let acc = accuracy(n, &data, &cfg.zscore)?;
        println!("train accuracy {acc:.3}");
        Ok(1.0 - acc)
    })?;
    println!(
        "{} epochs in {:.1}s, final accuracy {:.3}, final lr {:e}",
        history.epochs.len(),
        start.elapsed().as_secs_f64(),
        accuracy(&net, &data, &cfg.zscore)?,
        history.final_lr
    );
    Ok(())
}
