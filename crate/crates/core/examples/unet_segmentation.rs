//! Trains the UNet lung segmenter on phantom image/mask pairs and compares
//! its masks with the heuristic segmenter on fresh phantoms.
//!
//! `cargo run --example unet_segmentation -- [pairs] [epochs] [side]`

use cxrnet::corpus::Label;
use cxrnet::lungseg::{train_unet, HeuristicSegmenter, Segmenter, UNetConfig, UNetSegmenter, UNetTrainConfig};
use cxrnet::phantom::{PhantomConfig, PhantomGenerator};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let pairs: u64 = args.first().map_or(Ok(12), |s| s.parse())?;
    let epochs: usize = args.get(1).map_or(Ok(30), |s| s.parse())?;
    let side: usize = args.get(2).map_or(Ok(64), |s| s.parse())?;

    let gen = PhantomGenerator::new(PhantomConfig { width: 128, height: 128, ..Default::default() });
    let label = |i: u64| Label::from_index(i as usize % 3).unwrap();
    let train: Vec<_> = (0..pairs).map(|i| gen.generate(label(i), i)).map(|p| (p.image, p.mask)).collect();
    let cfg = UNetConfig { input_side: side, ..Default::default() };
    let (net, losses) = train_unet(&cfg, &train, &UNetTrainConfig { epochs, ..Default::default() })?;
    println!("loss {:.4} -> {:.4}", losses[0], losses[losses.len() - 1]);

    let unet = UNetSegmenter::new(net);
    let heuristic = HeuristicSegmenter::default();
    for i in 0..5 {
        let p = gen.generate(label(i), 1000 + i);
        println!(
            "phantom {i}: IoU unet {:.3}, heuristic {:.3}",
            unet.segment(&p.image).iou(&p.mask),
            heuristic.segment(&p.image).iou(&p.mask)
        );
    }
    Ok(())
}
