use cxrnet::imgproc::fit_side;
use cxrnet::lungseg::{preprocess, HeuristicSegmenter, PreprocessMode};
use cxrnet::model::{accuracy, build_network, load_checkpoint, save_checkpoint, train, CheckpointMeta, LabeledImage, NetworkConfig, TrainConfig};
use cxrnet::phantom::{generate_set, PhantomConfig};

fn phantoms(per_class: usize, side: usize) -> Vec<LabeledImage> {
    let seg = HeuristicSegmenter::default();
    generate_set(per_class, 7, &PhantomConfig::default())
        .into_iter()
        .map(|(rec, p)| LabeledImage {
            image: fit_side(&preprocess(&p.image, PreprocessMode::Segment, &seg).unwrap(), side),
            label: rec.label,
        })
        .collect()
}

fn small_net() -> NetworkConfig {
    NetworkConfig { input_side: 64, ..NetworkConfig::compact() }
}

#[test]
fn overfits_phantoms_with_a_larger_step() {
    let data = phantoms(20, 64);
    let cfg = TrainConfig { learning_rate: 1e-3, ..TrainConfig::default() };
    let (net, history) = train(build_network(&small_net(), 1).unwrap(), &data, &data, &cfg).unwrap();
    let acc = accuracy(&net, &data, &cfg.zscore).unwrap();
    assert!(acc >= 0.95, "train accuracy {acc}");
    let lrs = history.learning_rates();
    assert!(lrs.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] * cfg.plateau_factor));
}

#[test]
fn training_is_reproducible_and_checkpoints_roundtrip() {
    let data = phantoms(4, 32);
    let net_cfg = NetworkConfig { input_side: 32, ..NetworkConfig::compact() };
    let cfg = TrainConfig { learning_rate: 1e-3, epochs: 3, batch_size: 4, seed: 9, ..TrainConfig::default() };
    let run = || train(build_network(&net_cfg, 2).unwrap(), &data, &data[..3], &cfg).unwrap();
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha, hb);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &a, &CheckpointMeta { epoch: 3, seed: 9, ..Default::default() }).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.network, a);
    assert_eq!((loaded.meta.epoch, loaded.meta.seed), (3, 9));
}
