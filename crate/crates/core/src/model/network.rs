use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::corpus::Label;
use crate::imgproc::{InputTensor, Volume, INPUT_SIDE};
use crate::nn::{self, Conv2d, Dense, Grads, Parameterized};

/// Architecture of the classifier: `backbone_channels.len()` stages of
/// 3x3 conv + ReLU + 2x2 max-pool, flatten, two hidden dense layers with
/// ReLU and dropout, and a dense output layer followed by softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub backbone_channels: Vec<usize>,
    pub dense_sizes: [usize; 2],
    pub dropout_rate: f64,
    pub num_classes: usize,
    #[serde(default = "default_input_side")]
    pub input_side: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
}

fn default_input_side() -> usize {
    INPUT_SIDE
}

fn default_in_channels() -> usize {
    3
}

impl Default for NetworkConfig {
    /// Four stages 32/64/128/256 leaving a 14x14 map at 224 input.
    fn default() -> Self {
        NetworkConfig {
            backbone_channels: vec![32, 64, 128, 256],
            dense_sizes: [128, 64],
            dropout_rate: 0.3,
            num_classes: 3,
            input_side: INPUT_SIDE,
            in_channels: 3,
        }
    }
}

impl NetworkConfig {
    /// Same topology with a quarter of the channels; trains in seconds per
    /// epoch on a single core.
    pub fn compact() -> Self {
        NetworkConfig { backbone_channels: vec![8, 16, 32, 64], dense_sizes: [64, 32], ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.num_classes != Label::COUNT {
            return bad(format!("num_classes must be 3, got {}", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return bad("backbone needs at least one stage with non-zero width".into());
        }
        if self.dense_sizes.contains(&0) || self.in_channels == 0 {
            return bad("dense sizes and input channels must be non-zero".into());
        }
        if self.final_side() == 0 {
            return bad(format!(
                "input side {} too small for {} pooling stages",
                self.input_side,
                self.backbone_channels.len()
            ));
        }
        Ok(())
    }

    /// Side of the final feature map.
    pub fn final_side(&self) -> usize {
        self.backbone_channels.iter().fold(self.input_side, |s, _| s / 2)
    }

    pub fn feature_len(&self) -> usize {
        let s = self.final_side();
        s * s * self.backbone_channels.last().copied().unwrap_or(0)
    }
}

/// Softmax output: one probability per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbs(pub [f64; 3]);

impl ClassProbs {
    pub fn new(p: [f64; 3]) -> Result<Self, ModelError> {
        let sum: f64 = p.iter().sum();
        if p.iter().any(|x| !(0.0..=1.0).contains(x)) || (sum - 1.0).abs() > 1e-6 {
            return Err(ModelError::InvalidProbs(p));
        }
        Ok(ClassProbs(p))
    }

    pub fn get(&self, label: Label) -> f64 {
        self.0[label.index()]
    }

    /// Highest probability; ties go to the lowest class index.
    pub fn argmax(&self) -> Label {
        let mut best = 0;
        for i in 1..3 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        Label::from_index(best).expect("three classes")
    }
}

/// Whether dropout is active during a forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

/// Everything a backward pass or an attribution method needs from one
/// forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    conv_inputs: Vec<Volume>,
    conv_acts: Vec<Volume>,
    pool_args: Vec<Vec<usize>>,
    /// Final convolutional feature maps (after the last pooling).
    pub features: Volume,
    /// Post-ReLU hidden activations before dropout.
    pub hidden: [Vec<f64>; 2],
    drop_masks: [Vec<f64>; 2],
    dense_inputs: [Vec<f64>; 3],
    pub logits: Vec<f64>,
    pub probs: ClassProbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    config: NetworkConfig,
    convs: Vec<Conv2d>,
    dense: Vec<Dense>,
}

impl Parameterized for Network {
    fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for c in &self.convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        for d in &self.dense {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in self.convs.iter_mut() {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for d in self.dense.iter_mut() {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }
}

/// Glorot-initialized network with zero biases; identical seeds give
/// identical parameters.
pub fn build_network(cfg: &NetworkConfig, seed: u64) -> Result<Network, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut convs = Vec::new();
    let mut in_ch = cfg.in_channels;
    for &width in &cfg.backbone_channels {
        convs.push(Conv2d::new(in_ch, width, 3, &mut rng));
        in_ch = width;
    }
    let [h1, h2] = cfg.dense_sizes;
    let dense = vec![
        Dense::new(cfg.feature_len(), h1, &mut rng),
        Dense::new(h1, h2, &mut rng),
        Dense::new(h2, cfg.num_classes, &mut rng),
    ];
    Ok(Network { config: cfg.clone(), convs, dense })
}

impl Network {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn convs(&self) -> &[Conv2d] {
        &self.convs
    }

    pub fn dense_layers(&self) -> &[Dense] {
        &self.dense
    }

    pub fn dense_layers_mut(&mut self) -> &mut [Dense] {
        &mut self.dense
    }

    pub fn convs_mut(&mut self) -> &mut [Conv2d] {
        &mut self.convs
    }

    fn check_input(&self, x: &Volume) -> Result<(), ModelError> {
        let c = &self.config;
        if x.channels != c.in_channels || x.height != c.input_side || x.width != c.input_side {
            return Err(ModelError::InputShape {
                expected: (c.in_channels, c.input_side, c.input_side),
                got: (x.channels, x.height, x.width),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Volume, mode: Mode<'_>) -> Result<ForwardTrace, ModelError> {
        self.check_input(x)?;
        let mut conv_inputs = Vec::with_capacity(self.convs.len());
        let mut conv_acts = Vec::with_capacity(self.convs.len());
        let mut pool_args = Vec::with_capacity(self.convs.len());
        let mut current = x.clone();
        for conv in &self.convs {
            let mut act = conv.forward(&current);
            nn::relu_inplace(&mut act.data);
            let (pooled, arg) = nn::max_pool2(&act);
            conv_inputs.push(current);
            conv_acts.push(act);
            pool_args.push(arg);
            current = pooled;
        }
        let features = current;

        let rate = self.config.dropout_rate;
        let mut rng = match mode {
            Mode::Eval => None,
            Mode::Train(rng) => Some(rng),
        };
        let mut input = features.data.clone();
        let mut hidden: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let mut drop_masks: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let mut dense_inputs: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for layer in 0..2 {
            let mut h = self.dense[layer].forward(&input);
            nn::relu_inplace(&mut h);
            let mask = match rng.as_deref_mut() {
                Some(r) => nn::dropout_mask(h.len(), rate, r),
                None => vec![1.0; h.len()],
            };
            let dropped: Vec<f64> = h.iter().zip(&mask).map(|(a, m)| a * m).collect();
            dense_inputs[layer] = std::mem::replace(&mut input, dropped);
            hidden[layer] = h;
            drop_masks[layer] = mask;
        }
        let logits = self.dense[2].forward(&input);
        dense_inputs[2] = input;
        let p = nn::softmax(&logits);
        let probs = ClassProbs([p[0], p[1], p[2]]);
        Ok(ForwardTrace { conv_inputs, conv_acts, pool_args, features, hidden, drop_masks, dense_inputs, logits, probs })
    }

    /// Eval-mode class probabilities.
    pub fn probs(&self, x: &Volume) -> Result<ClassProbs, ModelError> {
        Ok(self.forward(x, Mode::Eval)?.probs)
    }

    /// Gradient of a scalar with respect to the final feature maps, given its
    /// gradient with respect to the logits. Parameter gradients are not
    /// accumulated.
    pub fn feature_gradient(&self, trace: &ForwardTrace, dlogits: &[f64]) -> Volume {
        let mut d = self.dense[2].input_grad(dlogits);
        for layer in (0..2).rev() {
            for ((g, &m), &h) in d.iter_mut().zip(&trace.drop_masks[layer]).zip(&trace.hidden[layer]) {
                *g *= m;
                if h <= 0.0 {
                    *g = 0.0;
                }
            }
            d = self.dense[layer].input_grad(&d);
        }
        let f = &trace.features;
        Volume::from_vec(f.channels, f.height, f.width, d)
    }

    /// Backpropagates `dlogits` through the whole network, accumulating into
    /// `grads` (ordered like [`Parameterized::params`]).
    pub fn backward(&self, trace: &ForwardTrace, dlogits: &[f64], grads: &mut Grads) {
        let n_conv = self.convs.len();
        let dense_base = 2 * n_conv;
        let mut d = dlogits.to_vec();
        for layer in (0..3).rev() {
            let (gw, rest) = grads.0[dense_base + 2 * layer..].split_at_mut(1);
            let dx = self.dense[layer].backward(&trace.dense_inputs[layer], &d, &mut gw[0], &mut rest[0]);
            d = dx;
            if layer > 0 {
                let l = layer - 1;
                for ((g, &m), &h) in d.iter_mut().zip(&trace.drop_masks[l]).zip(&trace.hidden[l]) {
                    *g *= m;
                    if h <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
        }
        let f = &trace.features;
        let mut dvol = Volume::from_vec(f.channels, f.height, f.width, d);
        for i in (0..n_conv).rev() {
            let act = &trace.conv_acts[i];
            let mut dact = nn::max_pool2_backward(&dvol, &trace.pool_args[i], (act.channels, act.height, act.width));
            nn::relu_backward(&act.data, &mut dact.data);
            let (gw, rest) = grads.0[2 * i..].split_at_mut(1);
            let dx = self.convs[i].backward(&trace.conv_inputs[i], &dact, &mut gw[0], &mut rest[0], i > 0);
            match dx {
                Some(v) => dvol = v,
                None => break,
            }
        }
    }

    /// Activations of the last hidden dense layer in eval mode.
    pub fn penultimate(&self, x: &Volume) -> Result<Vec<f64>, ModelError> {
        Ok(self.forward(x, Mode::Eval)?.hidden[1].clone())
    }
}

/// Eval-mode prediction on a network input.
pub fn predict(network: &Network, x: &InputTensor) -> Result<(ClassProbs, Label), ModelError> {
    let probs = network.probs(x.volume())?;
    Ok((probs, probs.argmax()))
}
