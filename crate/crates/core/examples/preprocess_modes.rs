//! Renders one phantom in each preprocessing mode as 16-bit PNGs.
//!
//! `cargo run --example preprocess_modes -- [out_dir] [pneumonia|covid19|control]`

use std::path::PathBuf;

use cxrnet::corpus::Label;
use cxrnet::lungseg::{preprocess_detailed, HeuristicSegmenter, PreprocessMode};
use cxrnet::phantom::{PhantomConfig, PhantomGenerator};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map_or("preprocess_modes", String::as_str));
    let label: Label = args.get(1).map_or(Ok(Label::Covid19), |s| s.parse())?;
    std::fs::create_dir_all(&out)?;

    let phantom = PhantomGenerator::new(PhantomConfig::default()).generate(label, 3);
    phantom.image.save_png(&out.join("input.png"))?;
    phantom.mask.save_png(&out.join("mask_truth.png"))?;
    let seg = HeuristicSegmenter::default();
    for mode in [PreprocessMode::Raw, PreprocessMode::Crop, PreprocessMode::Segment] {
        let p = preprocess_detailed(&phantom.image, mode, &seg)?;
        p.image.save_png(&out.join(format!("{mode}.png")))?;
        match p.square {
            Some(sq) => println!(
                "{mode}: {}x{} square side {} centered at ({}, {})",
                p.image.width(),
                p.image.height(),
                sq.side,
                sq.center_row,
                sq.center_col
            ),
            None => println!("{mode}: {}x{}", p.image.width(), p.image.height()),
        }
    }
    println!("wrote PNGs to {}", out.display());
    Ok(())
}
