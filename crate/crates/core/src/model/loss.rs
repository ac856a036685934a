use super::network::ClassProbs;
use crate::corpus::{ClassWeights, Label};

/// Probabilities are clamped here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// `-weight(label) * ln(prob(label))`.
pub fn weighted_ce(probs: &ClassProbs, label: Label, weights: &ClassWeights) -> f64 {
    -weights.get(label) * probs.get(label).max(PROB_FLOOR).ln()
}

/// Mean of [`weighted_ce`] over a batch; 0 for an empty batch.
pub fn weighted_ce_batch(batch: &[(ClassProbs, Label)], weights: &ClassWeights) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().map(|(p, y)| weighted_ce(p, *y, weights)).sum::<f64>() / batch.len() as f64
}

/// Gradient of [`weighted_ce`] with respect to the logits feeding the softmax.
pub fn weighted_ce_logit_grad(probs: &ClassProbs, label: Label, weights: &ClassWeights) -> [f64; 3] {
    let w = weights.get(label);
    let mut g = probs.0.map(|p| w * p);
    g[label.index()] -= w;
    g
}
