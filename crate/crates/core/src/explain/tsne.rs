//! Exact t-SNE (O(N^2) per iteration), adequate for a few thousand points.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TsneError {
    #[error("t-SNE needs at least one point")]
    TooFewPoints,
    #[error("feature vectors have different lengths ({0} vs {1})")]
    RaggedFeatures(usize, usize),
    #[error("non-finite feature value in point {0}")]
    NonFinite(usize),
    #[error("invalid t-SNE parameter: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    /// Defaults to N / early_exaggeration.
    pub learning_rate: Option<f64>,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub coords: Vec<[f64; 2]>,
    /// KL(P || Q) after every iteration, without exaggeration.
    pub kl_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Row `i` of the conditional affinities with Gaussian precision found by
/// bisection so that the row entropy equals ln(perplexity).
fn conditional_row(d: &[f64], i: usize, perplexity: f64) -> Vec<f64> {
    let n = d.len();
    let target = perplexity.ln();
    let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
    let mut row = vec![0.0; n];
    for _ in 0..200 {
        let min_d = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
        let mut sum = 0.0;
        for j in 0..n {
            row[j] = if j == i { 0.0 } else { (-(d[j] - min_d) * beta).exp() };
            sum += row[j];
        }
        let mut h = 0.0;
        for j in 0..n {
            row[j] /= sum;
            if row[j] > 0.0 {
                h -= row[j] * row[j].ln();
            }
        }
        let diff = h - target;
        if diff.abs() < 1e-10 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    row
}

/// Embeds `features` into 2-D. The result does not depend on the input
/// order: points are processed in lexicographic order of their features and
/// mapped back.
pub fn project_2d(features: &[Vec<f64>], cfg: &TsneConfig) -> Result<Embedding, TsneError> {
    let n = features.len();
    if n == 0 {
        return Err(TsneError::TooFewPoints);
    }
    if !(cfg.perplexity >= 2.0) || !(cfg.early_exaggeration >= 1.0) {
        return Err(TsneError::InvalidConfig("perplexity must be >= 2 and exaggeration >= 1".into()));
    }
    if cfg.learning_rate.is_some_and(|lr| !(lr > 0.0)) {
        return Err(TsneError::InvalidConfig("learning rate must be positive".into()));
    }
    let dim = features[0].len();
    for (i, f) in features.iter().enumerate() {
        if f.len() != dim {
            return Err(TsneError::RaggedFeatures(dim, f.len()));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(TsneError::NonFinite(i));
        }
    }
    if n == 1 {
        return Ok(Embedding { coords: vec![[0.0, 0.0]], kl_history: vec![0.0; cfg.iterations] });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lexicographic(&features[a], &features[b]));
    let x: Vec<&[f64]> = order.iter().map(|&i| features[i].as_slice()).collect();

    // Symmetrized joint affinities.
    let perplexity = cfg.perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let d: Vec<f64> = (0..n).map(|j| sq_dist(x[i], x[j])).collect();
        let row = conditional_row(&d, i, perplexity);
        p[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let v = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
        p[i * n + i] = 0.0;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-2).expect("finite");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let lr = cfg.learning_rate.unwrap_or(n as f64 / cfg.early_exaggeration);
    let mut kl_history = Vec::with_capacity(cfg.iterations);
    let mut num = vec![0.0; n * n];

    for it in 0..cfg.iterations {
        let exaggerate = if it < cfg.exaggeration_iterations { cfg.early_exaggeration } else { 1.0 };
        let momentum = if it < cfg.exaggeration_iterations { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                let v = 1.0 / (1.0 + d);
                num[i * n + j] = v;
                num[j * n + i] = v;
                z += 2.0 * v;
            }
        }
        let mut kl = 0.0;
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let pij = p[i * n + j];
                let qij = (num[i * n + j] / z).max(1e-300);
                kl += pij * (pij / qij).ln();
                let m = 4.0 * (exaggerate * pij - qij) * num[i * n + j];
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            for a in 0..2 {
                gains[i][a] = if (g[a] > 0.0) != (update[i][a] > 0.0) { gains[i][a] + 0.2 } else { gains[i][a] * 0.8 };
                gains[i][a] = gains[i][a].max(0.01);
                update[i][a] = momentum * update[i][a] - lr * gains[i][a] * g[a];
            }
        }
        // The KL value belongs to the positions the gradient was taken at.
        kl_history.push(kl);
        for (yi, u) in y.iter_mut().zip(&update) {
            yi[0] += u[0];
            yi[1] += u[1];
        }
        let mean = y.iter().fold([0.0, 0.0], |m, v| [m[0] + v[0], m[1] + v[1]]);
        for yi in y.iter_mut() {
            yi[0] -= mean[0] / n as f64;
            yi[1] -= mean[1] / n as f64;
        }
    }

    let mut coords = vec![[0.0; 2]; n];
    for (k, &orig) in order.iter().enumerate() {
        coords[orig] = y[k];
    }
    Ok(Embedding { coords, kl_history })
}
