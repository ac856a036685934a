//! Mini-batch Adam training with plateau learning-rate decay.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::loss::{weighted_ce, weighted_ce_logit_grad};
use super::network::{Mode, Network};
use super::ModelError;
use crate::corpus::{ClassWeights, Label};
use crate::imgproc::{normalize_volume, GrayImage, Volume, ZScoreParams};
use crate::nn::{Adam, Grads, Parameterized};
use crate::seed::derive_seed;

/// Training hyperparameters. Defaults: lr 2e-5, 24 epochs, batch 32, plateau
/// factor 0.5 with patience 3, augmentation of pneumonia and COVID-19 only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub seed: u64,
    pub class_weights: ClassWeights,
    pub augment_classes: Vec<Label>,
    pub augmentation: AugmentConfig,
    pub zscore: ZScoreParams,
    /// Fraction of each training fold held out for the plateau schedule.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            epochs: 24,
            batch_size: 32,
            plateau_factor: 0.5,
            plateau_patience: 3,
            seed: 0,
            class_weights: ClassWeights::uniform(),
            augment_classes: vec![Label::Pneumonia, Label::Covid19],
            augmentation: AugmentConfig::default(),
            zscore: ZScoreParams::IMAGENET,
            validation_fraction: 0.10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau_factor {} outside (0, 1)", self.plateau_factor));
        }
        if self.plateau_patience == 0 || self.batch_size == 0 {
            return bad("plateau_patience and batch_size must be at least 1".into());
        }
        if self.class_weights.0.iter().any(|&w| !(w > 0.0)) {
            return bad(format!("class weights must be positive: {:?}", self.class_weights.0));
        }
        Ok(())
    }
}

/// A preprocessed image at the network's input side, with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: GrayImage,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Learning rate after the last schedule update.
    pub final_lr: f64,
}

impl TrainHistory {
    pub fn learning_rates(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.lr).collect()
    }

    /// CSV with header `epoch,train_loss,val_loss,lr`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,val_loss,lr")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.lr)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> std::io::Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Reduce-on-plateau: after `patience` consecutive epochs without a strict
/// improvement of the best validation loss, multiply the rate by `factor`
/// and restart the count.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        PlateauScheduler { lr, factor, patience, best: f64::INFINITY, stale: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch's validation loss and returns the rate for the next.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr *= self.factor;
                self.stale = 0;
            }
        }
        self.lr
    }
}

/// Samples per gradient partial sum. Fixed, so the reduction order (and the
/// result) does not depend on the worker count.
const GRAD_CHUNK: usize = 4;

fn to_volume(net: &Network, img: &GrayImage, zscore: &ZScoreParams) -> Result<Volume, ModelError> {
    let side = net.config().input_side;
    if img.width() != side || img.height() != side {
        return Err(ModelError::InputShape {
            expected: (3, side, side),
            got: (3, img.height(), img.width()),
        });
    }
    Ok(normalize_volume(img, zscore))
}

/// Mean weighted cross-entropy of `data` in eval mode.
pub fn evaluate_loss(net: &Network, data: &[LabeledImage], cfg: &TrainConfig) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptySet("evaluation"));
    }
    let losses: Vec<f64> = data
        .par_iter()
        .map(|s| {
            let probs = net.probs(&to_volume(net, &s.image, &cfg.zscore)?)?;
            Ok(weighted_ce(&probs, s.label, &cfg.class_weights))
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Eval-mode accuracy on un-augmented images.
pub fn accuracy(net: &Network, data: &[LabeledImage], zscore: &ZScoreParams) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptySet("accuracy"));
    }
    let hits: Vec<bool> = data
        .par_iter()
        .map(|s| Ok(net.probs(&to_volume(net, &s.image, zscore)?)?.argmax() == s.label))
        .collect::<Result<_, ModelError>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len() as f64)
}

/// Trains with the weighted validation loss of `val` driving the schedule.
pub fn train(
    network: Network,
    train_set: &[LabeledImage],
    val_set: &[LabeledImage],
    cfg: &TrainConfig,
) -> Result<(Network, TrainHistory), ModelError> {
    if val_set.is_empty() {
        return Err(ModelError::EmptySet("validation"));
    }
    train_with_validator(network, train_set, cfg, |net| evaluate_loss(net, val_set, cfg))
}

/// Training loop with a caller-supplied validation objective, evaluated once
/// per epoch to drive the plateau schedule.
pub fn train_with_validator(
    mut network: Network,
    train_set: &[LabeledImage],
    cfg: &TrainConfig,
    mut validator: impl FnMut(&Network) -> Result<f64, ModelError>,
) -> Result<(Network, TrainHistory), ModelError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::EmptySet("training"));
    }
    let mut history = TrainHistory { epochs: Vec::new(), final_lr: cfg.learning_rate };
    if cfg.epochs == 0 {
        return Ok((network, history));
    }
    let mut adam = Adam::new(&network);
    let mut sched = PlateauScheduler::new(cfg.learning_rate, cfg.plateau_factor, cfg.plateau_patience);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = sched.lr();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle", epoch as u64, 0));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;

        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let net = &network;
            let partials: Vec<(Grads, f64)> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut grads = net.zero_grads();
                    let mut loss = 0.0;
                    for &idx in chunk {
                        let sample = &train_set[idx];
                        let aug_seed = derive_seed(cfg.seed, "augment", epoch as u64, idx as u64);
                        let img = augment(&sample.image, sample.label, cfg, aug_seed);
                        let x = to_volume(net, &img, &cfg.zscore)?;
                        let mut drop_rng =
                            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "dropout", epoch as u64, idx as u64));
                        let trace = net.forward(&x, Mode::Train(&mut drop_rng))?;
                        loss += weighted_ce(&trace.probs, sample.label, &cfg.class_weights);
                        let g = weighted_ce_logit_grad(&trace.probs, sample.label, &cfg.class_weights);
                        let dlogits: Vec<f64> = g.iter().map(|v| v * scale).collect();
                        net.backward(&trace, &dlogits, &mut grads);
                    }
                    Ok((grads, loss))
                })
                .collect::<Result<_, ModelError>>()?;

            let mut iter = partials.into_iter();
            let (mut grads, mut batch_loss) = iter.next().expect("non-empty batch");
            for (g, l) in iter {
                grads.add(&g);
                batch_loss += l;
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, batch: batch_no });
            }
            epoch_loss += batch_loss;
            adam.step(&mut network, &grads, lr);
        }

        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = validator(&network)?;
        if !val_loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:e}");
        history.epochs.push(EpochRecord { epoch, train_loss, val_loss, lr });
        history.final_lr = sched.observe(val_loss);
    }
    Ok((network, history))
}
