use std::io::Write;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::Label;
use crate::model::ClassProbs;

/// ROC curve as (FPR, TPR) points from (0, 0) to (1, 1), one point per
/// distinct score threshold, and the area under it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "fpr,tpr")?;
        for (f, t) in &self.points {
            writeln!(out, "{f},{t}")?;
        }
        Ok(())
    }

    /// TPR at `fpr`, linearly interpolated along the curve (the upper value
    /// at vertical segments).
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        let pts = &self.points;
        let mut best = 0.0f64;
        for w in pts.windows(2) {
            let ((f0, t0), (f1, t1)) = (w[0], w[1]);
            if fpr >= f0 && fpr <= f1 {
                let t = if f1 > f0 { t0 + (t1 - t0) * (fpr - f0) / (f1 - f0) } else { t1 };
                best = best.max(t);
            }
        }
        best
    }
}

/// One-vs-rest ROC using each record's probability for `positive`.
pub fn roc_auc(scores: &[ClassProbs], truth: &[Label], positive: Label) -> Result<RocCurve, EvalError> {
    if scores.len() != truth.len() {
        return Err(EvalError::LengthMismatch { preds: scores.len(), truth: truth.len() });
    }
    let s: Vec<f64> = scores.iter().map(|p| p.get(positive)).collect();
    let pos: Vec<bool> = truth.iter().map(|&t| t == positive).collect();
    roc_auc_scores(&s, &pos).map_err(|e| match e {
        EvalError::DegenerateLabels(_) => EvalError::DegenerateLabels(positive),
        other => other,
    })
}

/// ROC of a binary problem. Tied scores move along a diagonal segment, so
/// the trapezoid area equals the Mann-Whitney statistic with midranks; it is
/// accumulated in integers and divided once.
pub fn roc_auc_scores(scores: &[f64], positives: &[bool]) -> Result<RocCurve, EvalError> {
    if scores.len() != positives.len() {
        return Err(EvalError::LengthMismatch { preds: scores.len(), truth: positives.len() });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    let p_total = positives.iter().filter(|&&p| p).count() as u64;
    let n_total = positives.len() as u64 - p_total;
    if p_total == 0 || n_total == 0 {
        return Err(EvalError::DegenerateLabels(Label::Control));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the area in units of one positive x one negative.
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut dtp, mut dfp) = (0u64, 0u64);
        while i < order.len() && scores[order[i]].total_cmp(&s).is_eq() {
            if positives[order[i]] {
                dtp += 1;
            } else {
                dfp += 1;
            }
            i += 1;
        }
        area2 += dfp as u128 * (2 * tp + dtp) as u128;
        tp += dtp;
        fp += dfp;
        points.push((fp as f64 / n_total as f64, tp as f64 / p_total as f64));
    }
    let auc = area2 as f64 / (2 * p_total as u128 * n_total as u128) as f64;
    Ok(RocCurve { points, auc })
}

/// Macro-averaged curve: per-class TPRs averaged on a uniform FPR grid of
/// `steps + 1` points, with AUC equal to the mean of the class AUCs.
pub fn average_roc(curves: &[RocCurve], steps: usize) -> RocCurve {
    assert!(!curves.is_empty() && steps > 0, "need curves and a grid");
    let n = curves.len() as f64;
    let points = (0..=steps)
        .map(|k| {
            let f = k as f64 / steps as f64;
            let t = if k == 0 { 0.0 } else { curves.iter().map(|c| c.tpr_at(f)).sum::<f64>() / n };
            (f, t)
        })
        .collect();
    RocCurve { points, auc: curves.iter().map(|c| c.auc).sum::<f64>() / n }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mann_whitney(scores: &[f64], pos: &[bool]) -> f64 {
        let mut s = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        s += 1.0;
                    } else if scores[i] == scores[j] {
                        s += 0.5;
                    }
                }
            }
        }
        s / pairs
    }

    #[test]
    fn separated_and_tied() {
        let r = roc_auc_scores(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.points, vec![(0.0, 0.0), (0.0, 0.5), (0.0, 1.0), (0.5, 1.0), (1.0, 1.0)]);
        let t = roc_auc_scores(&[0.3; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(t.auc, 0.5);
        assert!(matches!(roc_auc_scores(&[0.1, 0.2], &[true, true]), Err(EvalError::DegenerateLabels(_))));
    }

    #[test]
    fn matches_pairwise_oracle_and_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(2..=30);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
            let mut pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            pos[0] = true;
            pos[1] = false;
            let auc = roc_auc_scores(&scores, &pos).unwrap().auc;
            assert_eq!(auc, mann_whitney(&scores, &pos));
            let flipped: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
            let comp = roc_auc_scores(&flipped, &pos).unwrap().auc;
            assert!((auc + comp - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn class_wrapper_and_average() {
        let probs = [ClassProbs([0.7, 0.2, 0.1]), ClassProbs([0.1, 0.8, 0.1]), ClassProbs([0.2, 0.2, 0.6])];
        let truth = [Label::Control, Label::Pneumonia, Label::Covid19];
        let curves: Vec<RocCurve> = Label::ALL.iter().map(|&l| roc_auc(&probs, &truth, l).unwrap()).collect();
        assert!(curves.iter().all(|c| c.auc == 1.0));
        let avg = average_roc(&curves, 10);
        assert_eq!(avg.auc, 1.0);
        assert_eq!(avg.points.len(), 11);
        assert_eq!(avg.points[5].1, 1.0);
        assert!(matches!(
            roc_auc(&probs[..1], &truth[..1], Label::Covid19),
            Err(EvalError::DegenerateLabels(Label::Covid19))
        ));
    }
}
