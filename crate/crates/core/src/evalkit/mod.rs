//! Confusion matrices, per-class and aggregate metrics, ROC/AUC, fold
//! aggregation and subgroup tables.

mod plots;
mod roc;
mod subgroup;

pub use plots::{confusion_svg, roc_svg, scatter_svg};
pub use roc::{average_roc, roc_auc, roc_auc_scores, RocCurve};
pub use subgroup::{subgroup_report, write_subgroup_csv, Factor, SubgroupRow, SubgroupTable};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::model::ClassProbs;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions for {truth} labels")]
    LengthMismatch { preds: usize, truth: usize },
    #[error("no records to evaluate")]
    Empty,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("only one class present for the one-vs-rest split of {0}")]
    DegenerateLabels(Label),
    #[error("need at least 2 fold reports, got {0}")]
    TooFewReports(usize),
    #[error("prediction for unknown record {0:?}")]
    UnknownRecord(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Raw counts; rows are the true class, columns the predicted class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn get(&self, truth: Label, pred: Label) -> u64 {
        self.counts[truth.index()][pred.index()]
    }

    /// Rows scaled to sum to 1 (rows without records stay 0).
    pub fn row_normalized(&self) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in self.counts.iter().enumerate() {
            let n: u64 = row.iter().sum();
            if n > 0 {
                for j in 0..3 {
                    out[i][j] = row[j] as f64 / n as f64;
                }
            }
        }
        out
    }

    /// Raw counts followed by the row-normalized rendering.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "kind,truth,control,pneumonia,covid19")?;
        for (i, row) in self.counts.iter().enumerate() {
            writeln!(out, "count,{},{},{},{}", Label::ALL[i], row[0], row[1], row[2])?;
        }
        for (i, row) in self.row_normalized().iter().enumerate() {
            writeln!(out, "normalized,{},{:.6},{:.6},{:.6}", Label::ALL[i], row[0], row[1], row[2])?;
        }
        Ok(())
    }
}

pub fn confusion(preds: &[Label], truth: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != truth.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), truth: truth.len() });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in preds.iter().zip(truth) {
        cm.counts[t.index()][p.index()] += 1;
    }
    Ok(cm)
}

/// A ratio whose denominator was zero and was reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "flag", content = "class")]
pub enum MetricFlag {
    UndefinedPpv(Label),
    UndefinedRecall(Label),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub ppv: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Indexed by class.
    pub classes: [ClassMetrics; 3],
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub gmr: f64,
    pub macro_auc: Option<f64>,
    #[serde(default)]
    pub flags: Vec<MetricFlag>,
    /// Sample standard deviation across folds (aggregates only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<Box<MetricsReport>>,
}

impl MetricsReport {
    pub fn class(&self, label: Label) -> &ClassMetrics {
        &self.classes[label.index()]
    }

    /// Every scalar in a fixed order: per class (ppv, recall, f1, auc), then
    /// acc, bacc, gmr, macro auc. Missing AUCs are NaN.
    fn scalars(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(16);
        for c in &self.classes {
            v.extend([c.ppv, c.recall, c.f1, c.auc.unwrap_or(f64::NAN)]);
        }
        v.extend([self.accuracy, self.balanced_accuracy, self.gmr, self.macro_auc.unwrap_or(f64::NAN)]);
        v
    }

    fn from_scalars(v: &[f64]) -> Self {
        let opt = |x: f64| (!x.is_nan()).then_some(x);
        let class = |i: usize| ClassMetrics { ppv: v[4 * i], recall: v[4 * i + 1], f1: v[4 * i + 2], auc: opt(v[4 * i + 3]) };
        MetricsReport {
            classes: [class(0), class(1), class(2)],
            accuracy: v[12],
            balanced_accuracy: v[13],
            gmr: v[14],
            macro_auc: opt(v[15]),
            flags: Vec::new(),
            std: None,
        }
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Threshold metrics from a confusion matrix (AUC fields left empty).
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let mut flags = Vec::new();
    let mut classes = [ClassMetrics::default(); 3];
    for (c, label) in Label::ALL.iter().enumerate() {
        let tp = cm.counts[c][c] as f64;
        let col: u64 = (0..3).map(|r| cm.counts[r][c]).sum();
        let row: u64 = cm.counts[c].iter().sum();
        let ppv = if col == 0 {
            flags.push(MetricFlag::UndefinedPpv(*label));
            0.0
        } else {
            tp / col as f64
        };
        let recall = if row == 0 {
            flags.push(MetricFlag::UndefinedRecall(*label));
            0.0
        } else {
            tp / row as f64
        };
        classes[c] = ClassMetrics { ppv, recall, f1: harmonic(ppv, recall), auc: None };
    }
    let recalls = classes.map(|c| c.recall);
    Ok(MetricsReport {
        classes,
        accuracy: cm.trace() as f64 / total as f64,
        balanced_accuracy: recalls.iter().sum::<f64>() / 3.0,
        gmr: recalls.iter().product::<f64>().cbrt(),
        macro_auc: None,
        flags,
        std: None,
    })
}

/// Fills per-class one-vs-rest AUCs and their mean. Classes absent from
/// `truth` (or the only class present) keep `None`, and the macro average is
/// only set when all three are defined.
pub fn attach_auc(report: &mut MetricsReport, scores: &[ClassProbs], truth: &[Label]) -> Result<(), EvalError> {
    for label in Label::ALL {
        report.classes[label.index()].auc = match roc_auc(scores, truth, label) {
            Ok(curve) => Some(curve.auc),
            Err(EvalError::DegenerateLabels(_)) => None,
            Err(e) => return Err(e),
        };
    }
    let aucs: Option<Vec<f64>> = report.classes.iter().map(|c| c.auc).collect();
    report.macro_auc = aucs.map(|a| a.iter().sum::<f64>() / 3.0);
    Ok(())
}

/// Full report for one set of predictions.
pub fn evaluate(probs: &[ClassProbs], truth: &[Label]) -> Result<MetricsReport, EvalError> {
    let preds: Vec<Label> = probs.iter().map(|p| p.argmax()).collect();
    let mut report = metrics(&confusion(&preds, truth)?)?;
    attach_auc(&mut report, probs, truth)?;
    Ok(report)
}

/// Element-wise mean with the sample (n - 1) standard deviation in `std`.
pub fn aggregate_folds(reports: &[MetricsReport]) -> Result<MetricsReport, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::TooFewReports(reports.len()));
    }
    let n = reports.len() as f64;
    let rows: Vec<Vec<f64>> = reports.iter().map(|r| r.scalars()).collect();
    let width = rows[0].len();
    let mut mean = vec![0.0; width];
    let mut std = vec![0.0; width];
    for k in 0..width {
        let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
        if col.iter().any(|v| v.is_nan()) {
            mean[k] = f64::NAN;
            std[k] = f64::NAN;
            continue;
        }
        let m = col.iter().sum::<f64>() / n;
        mean[k] = m;
        std[k] = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt();
    }
    let mut out = MetricsReport::from_scalars(&mean);
    let mut flags: Vec<MetricFlag> = reports.iter().flat_map(|r| r.flags.iter().copied()).collect();
    flags.sort();
    flags.dedup();
    out.flags = flags;
    out.std = Some(Box::new(MetricsReport::from_scalars(&std)));
    Ok(out)
}

/// One classified record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub record_id: String,
    pub truth: Label,
    pub pred: Label,
    pub p_control: f64,
    pub p_pneumonia: f64,
    pub p_covid19: f64,
}

impl Prediction {
    pub fn new(record_id: &str, truth: Label, probs: &ClassProbs) -> Self {
        Prediction {
            record_id: record_id.to_string(),
            truth,
            pred: probs.argmax(),
            p_control: probs.0[0],
            p_pneumonia: probs.0[1],
            p_covid19: probs.0[2],
        }
    }

    pub fn probs(&self) -> ClassProbs {
        ClassProbs([self.p_control, self.p_pneumonia, self.p_covid19])
    }
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for p in preds {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, EvalError> {
    Ok(csv::Reader::from_path(path)?.deserialize().collect::<Result<_, _>>()?)
}

/// Full report for stored predictions.
pub fn evaluate_predictions(preds: &[Prediction]) -> Result<MetricsReport, EvalError> {
    let probs: Vec<ClassProbs> = preds.iter().map(|p| p.probs()).collect();
    let truth: Vec<Label> = preds.iter().map(|p| p.truth).collect();
    let pred_labels: Vec<Label> = preds.iter().map(|p| p.pred).collect();
    let mut report = metrics(&confusion(&pred_labels, &truth)?)?;
    attach_auc(&mut report, &probs, &truth)?;
    Ok(report)
}
