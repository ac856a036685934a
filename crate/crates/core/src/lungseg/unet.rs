use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::heuristic::{fill_holes, keep_largest_components};
use super::Segmenter;
use crate::imgproc::{self, GrayImage, LungMask, Volume};
use crate::model::checkpoint::{assign_params, read_blob, write_blob};
use crate::model::{CheckpointMeta, ModelError};
use crate::nn::{self, Adam, Conv2d, Grads, Parameterized};
use crate::seed::derive_seed;

const GRAD_CHUNK: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Images are resized to `input_side x input_side` before inference.
    pub input_side: usize,
    /// Channels at the first level; doubled at every level down.
    pub base_channels: usize,
    pub levels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig { input_side: 64, base_channels: 4, levels: 4 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.levels == 0 || self.base_channels == 0 {
            return Err(ModelError::InvalidConfig("UNet needs at least one level and one channel".into()));
        }
        if self.input_side == 0 || self.input_side % (1 << self.levels) != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "UNet input side {} is not divisible by 2^{}",
                self.input_side, self.levels
            )));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

/// Encoder-decoder with skip connections. Each level runs two 3x3 conv+ReLU
/// blocks; the decoder upsamples (nearest), applies a 3x3 conv+ReLU and
/// concatenates the matching encoder output. A 1x1 conv produces one logit
/// per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet {
    config: UNetConfig,
    convs: Vec<Conv2d>,
}

struct Trace {
    ins: Vec<Volume>,
    outs: Vec<Volume>,
    pool_args: Vec<Vec<usize>>,
    logits: Volume,
}

impl Parameterized for UNet {
    fn params(&self) -> Vec<&[f64]> {
        self.convs.iter().flat_map(|c| [c.weight.as_slice(), c.bias.as_slice()]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.convs
            .iter_mut()
            .flat_map(|c| [c.weight.as_mut_slice(), c.bias.as_mut_slice()])
            .collect()
    }
}

impl UNet {
    pub fn new(config: &UNetConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let levels = config.levels;
        let ch = |l| config.channels(l);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "unet-init", 0, 0));
        let mut convs = Vec::with_capacity(5 * levels + 3);
        for l in 0..levels {
            let input = if l == 0 { 1 } else { ch(l - 1) };
            convs.push(Conv2d::new(input, ch(l), 3, &mut rng));
            convs.push(Conv2d::new(ch(l), ch(l), 3, &mut rng));
        }
        convs.push(Conv2d::new(ch(levels - 1), ch(levels), 3, &mut rng));
        convs.push(Conv2d::new(ch(levels), ch(levels), 3, &mut rng));
        for l in 0..levels {
            convs.push(Conv2d::new(ch(l + 1), ch(l), 3, &mut rng));
        }
        for l in 0..levels {
            convs.push(Conv2d::new(2 * ch(l), ch(l), 3, &mut rng));
            convs.push(Conv2d::new(ch(l), ch(l), 3, &mut rng));
        }
        convs.push(Conv2d::new(ch(0), 1, 1, &mut rng));
        Ok(UNet { config: config.clone(), convs })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    fn enc(&self, l: usize, j: usize) -> usize {
        2 * l + j
    }

    fn bottleneck(&self, j: usize) -> usize {
        2 * self.config.levels + j
    }

    fn up(&self, l: usize) -> usize {
        2 * self.config.levels + 2 + l
    }

    fn dec(&self, l: usize, j: usize) -> usize {
        3 * self.config.levels + 2 + 2 * l + j
    }

    fn head(&self) -> usize {
        5 * self.config.levels + 2
    }

    fn forward(&self, x: &Volume) -> Trace {
        let n = self.convs.len();
        let mut ins = vec![Volume::zeros(0, 0, 0); n];
        let mut outs = vec![Volume::zeros(0, 0, 0); n];
        let mut run = |i: usize, input: Volume, relu: bool| -> Volume {
            let mut y = self.convs[i].forward(&input);
            if relu {
                nn::relu_inplace(&mut y.data);
            }
            ins[i] = input;
            outs[i] = y.clone();
            y
        };
        let levels = self.config.levels;
        let mut skips = Vec::with_capacity(levels);
        let mut pool_args = Vec::with_capacity(levels);
        let mut h = x.clone();
        for l in 0..levels {
            let a = run(self.enc(l, 0), h, true);
            let b = run(self.enc(l, 1), a, true);
            let (p, arg) = nn::max_pool2(&b);
            skips.push(b);
            pool_args.push(arg);
            h = p;
        }
        let a = run(self.bottleneck(0), h, true);
        h = run(self.bottleneck(1), a, true);
        for l in (0..levels).rev() {
            let u = run(self.up(l), nn::upsample2(&h), true);
            let cat = nn::concat_channels(&skips[l], &u);
            let a = run(self.dec(l, 0), cat, true);
            h = run(self.dec(l, 1), a, true);
        }
        let logits = run(self.head(), h, false);
        Trace { ins, outs, pool_args, logits }
    }

    fn backward(&self, trace: &Trace, dlogits: Volume, grads: &mut Grads) {
        let step = |i: usize, mut dy: Volume, relu: bool, want_dx: bool, grads: &mut Grads| -> Option<Volume> {
            if relu {
                nn::relu_backward(&trace.outs[i].data, &mut dy.data);
            }
            let (gw, rest) = grads.0[2 * i..].split_at_mut(1);
            self.convs[i].backward(&trace.ins[i], &dy, &mut gw[0], &mut rest[0], want_dx)
        };
        let levels = self.config.levels;
        let mut g = step(self.head(), dlogits, false, true, grads).expect("dx");
        let mut skip_grads = vec![None; levels];
        for l in 0..levels {
            g = step(self.dec(l, 1), g, true, true, grads).expect("dx");
            let dcat = step(self.dec(l, 0), g, true, true, grads).expect("dx");
            let (dskip, du) = nn::split_channels(&dcat, self.config.channels(l));
            skip_grads[l] = Some(dskip);
            g = nn::upsample2_backward(&step(self.up(l), du, true, true, grads).expect("dx"));
        }
        g = step(self.bottleneck(1), g, true, true, grads).expect("dx");
        g = step(self.bottleneck(0), g, true, true, grads).expect("dx");
        for l in (0..levels).rev() {
            let skip = &trace.outs[self.enc(l, 1)];
            let mut d = nn::max_pool2_backward(&g, &trace.pool_args[l], (skip.channels, skip.height, skip.width));
            for (a, b) in d.data.iter_mut().zip(&skip_grads[l].take().expect("skip grad").data) {
                *a += b;
            }
            g = step(self.enc(l, 1), d, true, true, grads).expect("dx");
            match step(self.enc(l, 0), g, true, l > 0, grads) {
                Some(dx) => g = dx,
                None => return,
            }
        }
    }

    /// Per-pixel lung probabilities at `input_side x input_side`.
    pub fn probabilities(&self, img: &GrayImage) -> Vec<f64> {
        let x = self.prepare(img);
        self.forward(&x).logits.data.iter().map(|&z| nn::sigmoid(z)).collect()
    }

    fn prepare(&self, img: &GrayImage) -> Volume {
        let s = self.config.input_side;
        let resized = imgproc::bilinear_resize(&img.to_unit(), img.width(), img.height(), s, s);
        let n = resized.len() as f64;
        let mean = resized.iter().sum::<f64>() / n;
        let std = (resized.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-6);
        Volume::from_vec(1, s, s, resized.iter().map(|v| (v - mean) / std).collect())
    }

    fn target(&self, mask: &LungMask) -> Vec<f64> {
        let s = self.config.input_side;
        let raw: Vec<f64> = mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        imgproc::bilinear_resize(&raw, mask.width(), mask.height(), s, s)
            .into_iter()
            .map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<(), ModelError> {
        write_blob(path, "unet", &self.config, &self.params(), meta)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta), ModelError> {
        let (config, meta, params): (UNetConfig, _, _) = read_blob(path, "unet")?;
        let mut net = UNet::new(&config, 0)?;
        assign_params(&mut net, params)?;
        Ok((net, meta))
    }
}

/// Mean binary cross-entropy plus soft Dice loss, with the gradient
/// with respect to the logits.
pub(crate) fn bce_dice(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let p: Vec<f64> = logits.iter().map(|&z| nn::sigmoid(z)).collect();
    let eps = 1e-12;
    let bce = p
        .iter()
        .zip(target)
        .map(|(&p, &t)| -(t * p.max(eps).ln() + (1.0 - t) * (1.0 - p).max(eps).ln()))
        .sum::<f64>()
        / n;
    let inter: f64 = p.iter().zip(target).map(|(p, t)| p * t).sum();
    let total: f64 = p.iter().sum::<f64>() + target.iter().sum::<f64>();
    let dice = (2.0 * inter + 1.0) / (total + 1.0);
    let grad = p
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d_dice = (2.0 * t * (total + 1.0) - (2.0 * inter + 1.0)) / (total + 1.0).powi(2);
            (p - t) / n - d_dice * p * (1.0 - p)
        })
        .collect();
    (bce + 1.0 - dice, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for UNetTrainConfig {
    fn default() -> Self {
        UNetTrainConfig { epochs: 30, learning_rate: 3e-3, batch_size: 4, seed: 0 }
    }
}

/// Trains on image / mask pairs; returns the network and the mean loss per
/// epoch.
pub fn train_unet(
    config: &UNetConfig,
    pairs: &[(GrayImage, LungMask)],
    train: &UNetTrainConfig,
) -> Result<(UNet, Vec<f64>), ModelError> {
    if pairs.is_empty() {
        return Err(ModelError::EmptySet("segmentation training"));
    }
    if train.batch_size == 0 || !(train.learning_rate > 0.0) {
        return Err(ModelError::InvalidConfig("UNet training needs a positive batch size and learning rate".into()));
    }
    let mut net = UNet::new(config, train.seed)?;
    let data: Vec<(Volume, Vec<f64>)> = pairs.iter().map(|(img, mask)| (net.prepare(img), net.target(mask))).collect();
    let mut adam = Adam::new(&net);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(train.epochs);
    for epoch in 0..train.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(train.seed, "unet-shuffle", epoch as u64, 0));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(train.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let model = &net;
            let partials: Vec<(Grads, f64)> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut grads = model.zero_grads();
                    let mut loss = 0.0;
                    for &i in chunk {
                        let (x, t) = &data[i];
                        let trace = model.forward(x);
                        let (l, g) = bce_dice(&trace.logits.data, t);
                        loss += l;
                        let s = model.config.input_side;
                        let dlogits = Volume::from_vec(1, s, s, g.into_iter().map(|v| v * scale).collect());
                        model.backward(&trace, dlogits, &mut grads);
                    }
                    (grads, loss)
                })
                .collect();
            let mut iter = partials.into_iter();
            let (mut grads, mut loss) = iter.next().expect("non-empty batch");
            for (g, l) in iter {
                grads.add(&g);
                loss += l;
            }
            if !loss.is_finite() || !grads.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, batch: batch_no });
            }
            epoch_loss += loss;
            adam.step(&mut net, &grads, train.learning_rate);
        }
        let mean = epoch_loss / data.len() as f64;
        log::debug!("unet epoch {epoch}: loss {mean:.5}");
        history.push(mean);
    }
    Ok((net, history))
}

/// Thresholded UNet output mapped back to the input resolution, keeping the
/// two largest components with holes filled.
#[derive(Debug, Clone)]
pub struct UNetSegmenter {
    pub net: UNet,
    pub threshold: f64,
}

impl UNetSegmenter {
    pub fn new(net: UNet) -> Self {
        UNetSegmenter { net, threshold: 0.5 }
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Ok(UNetSegmenter::new(UNet::load(path)?.0))
    }
}

impl Segmenter for UNetSegmenter {
    fn segment(&self, img: &GrayImage) -> LungMask {
        let s = self.net.config.input_side;
        let probs = self.net.probabilities(img);
        let full = imgproc::bilinear_resize(&probs, s, s, img.width(), img.height());
        let raw = LungMask::new(img.width(), img.height(), full.iter().map(|&p| p > self.threshold).collect())
            .expect("same dims");
        fill_holes(&keep_largest_components(&raw, 2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::phantom::{PhantomConfig, PhantomGenerator};

    fn tiny() -> UNetConfig {
        UNetConfig { input_side: 8, base_channels: 1, levels: 2 }
    }

    #[test]
    fn config_validation() {
        assert!(UNetConfig { input_side: 60, ..Default::default() }.validate().is_err());
        assert!(UNetConfig { levels: 0, ..Default::default() }.validate().is_err());
        assert!(UNetConfig::default().validate().is_ok());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let logits = [0.3, -1.2, 2.0, 0.1, -0.4];
        let target = [1.0, 0.0, 1.0, 1.0, 0.0];
        let (_, g) = bce_dice(&logits, &target);
        for i in 0..logits.len() {
            let h = 1e-6;
            let mut up = logits;
            up[i] += h;
            let mut down = logits;
            down[i] -= h;
            let fd = (bce_dice(&up, &target).0 - bce_dice(&down, &target).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut net = UNet::new(&tiny(), 5).unwrap();
        // Non-zero biases keep pre-activations away from the ReLU kink.
        for (i, c) in net.convs.iter_mut().enumerate() {
            for (j, b) in c.bias.iter_mut().enumerate() {
                *b = 0.05 + 0.03 * ((i * 7 + j * 3) % 5) as f64;
            }
        }
        let x = Volume::from_vec(1, 8, 8, (0..64).map(|i| ((i * 37 % 17) as f64 - 8.0) / 5.0).collect());
        let target: Vec<f64> = (0..64).map(|i| ((i / 8 + i % 8) % 3 == 0) as u8 as f64).collect();
        let trace = net.forward(&x);
        let (_, g) = bce_dice(&trace.logits.data, &target);
        let mut grads = net.zero_grads();
        net.backward(&trace, Volume::from_vec(1, 8, 8, g), &mut grads);
        let loss = |n: &UNet| bce_dice(&n.forward(&x).logits.data, &target).0;
        let n_slots = grads.0.len();
        for slot in 0..n_slots {
            let idx = 0;
            let h = 1e-5;
            let orig = net.params()[slot][idx];
            net.params_mut()[slot][idx] = orig + h;
            let lp = loss(&net);
            net.params_mut()[slot][idx] = orig - h;
            let lm = loss(&net);
            net.params_mut()[slot][idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = grads.0[slot][idx];
            assert!((fd - an).abs() <= 1e-5 * (1.0 + fd.abs()), "slot {slot}: {fd} vs {an}");
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let net = UNet::new(&tiny(), 9).unwrap();
        let path = dir.path().join("unet.ckpt");
        net.save(&path, &CheckpointMeta::default()).unwrap();
        assert_eq!(UNet::load(&path).unwrap().0, net);
        assert!(crate::model::load_checkpoint(&path).is_err());
    }

    #[test]
    fn learns_phantom_lungs() {
        let gen = PhantomGenerator::new(PhantomConfig { width: 96, height: 96, ..Default::default() });
        let pairs: Vec<_> = (0..12)
            .map(|i| {
                let ph = gen.generate(Label::ALL[i % 3], i as u64);
                (ph.image, ph.mask)
            })
            .collect();
        let cfg = UNetConfig { input_side: 32, base_channels: 4, levels: 4 };
        let (net, history) =
            train_unet(&cfg, &pairs, &UNetTrainConfig { epochs: 25, seed: 1, ..Default::default() }).unwrap();
        assert!(history.last().unwrap() < &history[0]);
        let seg = UNetSegmenter::new(net);
        let test = gen.generate(Label::Pneumonia, 999);
        let iou = seg.segment(&test.image).iou(&test.mask);
        assert!(iou > 0.8, "IoU {iou}");
    }
}
