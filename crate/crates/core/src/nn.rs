//! Layer kernels with explicit forward and backward passes.
//!
//! Everything works on one sample at a time (`Volume`s are `c x h x w`);
//! mini-batches are handled by callers accumulating gradients. Parameters are
//! plain `Vec<f64>` so models can expose them as a flat list for the
//! optimizer, checkpoints and finite-difference checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::imgproc::Volume;

/// `c = alpha * op(a) * op(b) + beta * c` with `op(a)` of shape `m x k` and
/// `op(b)` of shape `k x n`, all row-major. `a_t` / `b_t` select a transposed
/// view of the stored matrix.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand sizes");
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches given
    // these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Glorot (Xavier) uniform weights in `±sqrt(6 / (fan_in + fan_out))`.
fn glorot_uniform(fan_in: usize, fan_out: usize, len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.random_range(-limit..=limit)).collect()
}

/// Square convolution, stride 1, zero "same" padding (odd kernel side).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    /// `out_ch x (in_ch * kernel * kernel)`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        assert!(kernel % 2 == 1, "kernel side must be odd");
        let fan_in = in_ch * kernel * kernel;
        Conv2d {
            in_ch,
            out_ch,
            kernel,
            weight: glorot_uniform(fan_in, out_ch * kernel * kernel, out_ch * fan_in, rng),
            bias: vec![0.0; out_ch],
        }
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn im2col(&self, x: &Volume) -> Vec<f64> {
        let (h, w, k) = (x.height, x.width, self.kernel);
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut cols = vec![0.0; self.patch_len() * hw];
        for c in 0..self.in_ch {
            let plane = x.plane(c);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let out = &mut dst[y * w..(y + 1) * w];
                        let x_lo = (-dx).max(0) as usize;
                        let x_hi = (w as isize - dx.max(0)) as usize;
                        if x_lo < x_hi {
                            let s_lo = (x_lo as isize + dx) as usize;
                            out[x_lo..x_hi].copy_from_slice(&src[s_lo..s_lo + (x_hi - x_lo)]);
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize) -> Volume {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut out = Volume::zeros(self.in_ch, h, w);
        for c in 0..self.in_ch {
            let plane = &mut out.data[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * hw..(row + 1) * hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let x_lo = (-dx).max(0) as usize;
                        let x_hi = (w as isize - dx.max(0)) as usize;
                        if x_lo >= x_hi {
                            continue;
                        }
                        let s_lo = (x_lo as isize + dx) as usize;
                        let dst = &mut plane[sy as usize * w + s_lo..sy as usize * w + s_lo + (x_hi - x_lo)];
                        for (d, s) in dst.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                            *d += s;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Volume) -> Volume {
        assert_eq!(x.channels, self.in_ch, "conv input channels");
        let hw = x.height * x.width;
        let cols = self.im2col(x);
        let mut out = vec![0.0; self.out_ch * hw];
        for (o, row) in out.chunks_mut(hw).enumerate() {
            row.fill(self.bias[o]);
        }
        gemm(self.out_ch, self.patch_len(), hw, &self.weight, false, &cols, false, &mut out, 1.0);
        Volume::from_vec(self.out_ch, x.height, x.width, out)
    }

    /// Accumulates parameter gradients for input `x` and upstream gradient
    /// `dy`; returns the input gradient when `want_dx`.
    pub fn backward(&self, x: &Volume, dy: &Volume, gw: &mut [f64], gb: &mut [f64], want_dx: bool) -> Option<Volume> {
        let hw = x.height * x.width;
        let cols = self.im2col(x);
        gemm(self.out_ch, hw, self.patch_len(), &dy.data, false, &cols, true, gw, 1.0);
        for (o, g) in gb.iter_mut().enumerate() {
            *g += dy.data[o * hw..(o + 1) * hw].iter().sum::<f64>();
        }
        if !want_dx {
            return None;
        }
        let mut dcols = cols;
        gemm(self.patch_len(), self.out_ch, hw, &self.weight, true, &dy.data, false, &mut dcols, 0.0);
        Some(self.col2im(&dcols, x.height, x.width))
    }
}

pub fn relu_inplace(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the post-ReLU activation is not positive.
pub fn relu_backward(activated: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled volume and, per output, the flat input index of its max.
pub fn max_pool2(x: &Volume) -> (Volume, Vec<usize>) {
    let (oh, ow) = (x.height / 2, x.width / 2);
    let mut out = Volume::zeros(x.channels, oh, ow);
    let mut arg = vec![0usize; x.channels * oh * ow];
    let hw = x.height * x.width;
    for c in 0..x.channels {
        for y in 0..oh {
            for xx in 0..ow {
                let base = c * hw + 2 * y * x.width + 2 * xx;
                let cands = [base, base + 1, base + x.width, base + x.width + 1];
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if x.data[i] > x.data[best] {
                        best = i;
                    }
                }
                let o = (c * oh + y) * ow + xx;
                out.data[o] = x.data[best];
                arg[o] = best;
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward(dy: &Volume, arg: &[usize], in_shape: (usize, usize, usize)) -> Volume {
    let mut dx = Volume::zeros(in_shape.0, in_shape.1, in_shape.2);
    for (g, &i) in dy.data.iter().zip(arg) {
        dx.data[i] += g;
    }
    dx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(x: &Volume) -> Volume {
    let (oh, ow) = (x.height * 2, x.width * 2);
    let mut out = Volume::zeros(x.channels, oh, ow);
    for c in 0..x.channels {
        for y in 0..oh {
            for xx in 0..ow {
                out.data[(c * oh + y) * ow + xx] = x.data[(c * x.height + y / 2) * x.width + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(dy: &Volume) -> Volume {
    let (h, w) = (dy.height / 2, dy.width / 2);
    let mut dx = Volume::zeros(dy.channels, h, w);
    for c in 0..dy.channels {
        for y in 0..dy.height {
            for xx in 0..dy.width {
                dx.data[(c * h + y / 2) * w + xx / 2] += dy.data[(c * dy.height + y) * dy.width + xx];
            }
        }
    }
    dx
}

/// Stacks two volumes along the channel axis.
pub fn concat_channels(a: &Volume, b: &Volume) -> Volume {
    assert_eq!((a.height, a.width), (b.height, b.width), "concat spatial dims");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Volume::from_vec(a.channels + b.channels, a.height, a.width, data)
}

pub fn split_channels(v: &Volume, first: usize) -> (Volume, Volume) {
    let n = first * v.height * v.width;
    (
        Volume::from_vec(first, v.height, v.width, v.data[..n].to_vec()),
        Volume::from_vec(v.channels - first, v.height, v.width, v.data[n..].to_vec()),
    )
}

/// Fully connected layer, `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Dense { inputs, outputs, weight: glorot_uniform(inputs, outputs, inputs * outputs, rng), bias: vec![0.0; outputs] }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        gemm(self.outputs, self.inputs, 1, &self.weight, false, x, false, &mut out, 1.0);
        out
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
        gemm(self.outputs, 1, self.inputs, dy, false, x, false, gw, 1.0);
        for (g, d) in gb.iter_mut().zip(dy) {
            *g += d;
        }
        self.input_grad(dy)
    }

    pub fn input_grad(&self, dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        gemm(self.inputs, self.outputs, 1, &self.weight, true, dy, false, &mut dx, 0.0);
        dx
    }
}

/// Inverted dropout mask: kept units carry `1 / (1 - rate)`, dropped ones 0.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gradient buffers shaped like a model's parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn zeros_like(params: &[&[f64]]) -> Self {
        Grads(params.iter().map(|p| vec![0.0; p.len()]).collect())
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.0.iter_mut() {
            for x in a.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }
}

/// Something with a flat, ordered parameter list.
pub trait Parameterized {
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn zero_grads(&self) -> Grads {
        Grads::zeros_like(&self.params())
    }
}

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &impl Parameterized) -> Self {
        let shapes = model.zero_grads().0;
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: shapes.clone(), v: shapes }
    }

    pub fn step(&mut self, model: &mut impl Parameterized, grads: &Grads, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in model.params_mut().into_iter().zip(&grads.0).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
