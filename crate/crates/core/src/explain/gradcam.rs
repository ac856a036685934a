use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::imgproc::{self, InputTensor, Volume};
use crate::model::{Mode, ModelError, Network};

/// Class-activation map at input resolution, values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl HeatMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// Grad-CAM output before and after upsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCam {
    /// Channel weights: spatial means of the target-score gradient.
    pub alphas: Vec<f64>,
    /// ReLU of the weighted activation sum at feature-map resolution.
    pub raw: Vec<f64>,
    pub raw_width: usize,
    pub raw_height: usize,
    pub heatmap: HeatMap,
}

pub fn grad_cam(network: &Network, x: &InputTensor, target: Label) -> Result<HeatMap, ModelError> {
    Ok(grad_cam_volume(network, x.volume(), target)?.heatmap)
}

/// Grad-CAM on the final feature map of the backbone for any input the
/// network accepts.
pub fn grad_cam_volume(network: &Network, x: &Volume, target: Label) -> Result<GradCam, ModelError> {
    let trace = network.forward(x, Mode::Eval)?;
    let mut onehot = vec![0.0; network.config().num_classes];
    onehot[target.index()] = 1.0;
    let grad = network.feature_gradient(&trace, &onehot);
    let a = &trace.features;
    let hw = a.height * a.width;
    let alphas: Vec<f64> = (0..a.channels).map(|k| grad.plane(k).iter().sum::<f64>() / hw as f64).collect();
    let mut raw = vec![0.0; hw];
    for (k, &alpha) in alphas.iter().enumerate() {
        for (r, &v) in raw.iter_mut().zip(a.plane(k)) {
            *r += alpha * v;
        }
    }
    for r in raw.iter_mut() {
        *r = r.max(0.0);
    }
    let mut values = imgproc::bilinear_resize(&raw, a.width, a.height, x.width, x.height);
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for v in values.iter_mut() {
            *v = (*v / max).clamp(0.0, 1.0);
        }
    }
    Ok(GradCam {
        alphas,
        raw,
        raw_width: a.width,
        raw_height: a.height,
        heatmap: HeatMap { width: x.width, height: x.height, values },
    })
}

/// Activations of the last hidden dense layer in eval mode.
pub fn penultimate_features(network: &Network, x: &InputTensor) -> Result<Vec<f64>, ModelError> {
    network.penultimate(x.volume())
}
