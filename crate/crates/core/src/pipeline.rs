//! End-to-end orchestration: ingest, preprocess, k-fold training,
//! evaluation, Grad-CAM overlays and embeddings, with every artifact written
//! under one output directory.
//!
//! ```text
//! out/
//!   class_weights.json  folds.json  skipped.json  run_manifest.json
//!   processed/          manifest.csv + one PNG per record
//!   checkpoints/        fold_<k>.ckpt
//!   history_<k>.csv
//!   predictions/        fold_<k>.csv, all.csv
//!   metrics.json  confusion.csv  roc_<class>.csv  subgroup_<factor>.csv  subgroups.csv
//!   plots/              roc.svg  roc_average.svg  confusion.svg  embed_label.svg  embed_source.svg
//!   gradcam/            <record_id>_<class>.png
//!   embed/points.csv
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{self, ClassWeights, CorpusError, FoldSplit, ImageRecord, Label};
use crate::evalkit::{self, EvalError, Factor, MetricsReport, Prediction, RocCurve};
use crate::explain::{self, TsneConfig, TsneError};
use crate::imgproc::{self, GrayImage, ImgError, Volume};
use crate::lungseg::{self, HeuristicSegmenter, PreprocessMode, SegError, Segmenter, UNetSegmenter};
use crate::model::{self, CheckpointMeta, LabeledImage, ModelError, Network, NetworkConfig, TrainConfig, TrainHistory};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing input: {}", .0.display())]
    MissingPath(PathBuf),
    #[error("record {record_id}: {message}")]
    Record { record_id: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Image(#[from] ImgError),
    #[error(transparent)]
    Segmentation(#[from] SegError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Embedding(#[from] TsneError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PipelineError {
    /// 2 for configuration problems, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::MissingPath(_) => 2,
            PipelineError::Corpus(CorpusError::MissingFile(_)) => 2,
            _ => 1,
        }
    }
}

fn record_err(record_id: &str, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Record { record_id: record_id.to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SegmenterChoice {
    Heuristic,
    Unet { checkpoint: PathBuf },
}

impl SegmenterChoice {
    pub fn build(&self) -> Result<Box<dyn Segmenter>, PipelineError> {
        Ok(match self {
            SegmenterChoice::Heuristic => Box::new(HeuristicSegmenter::default()),
            SegmenterChoice::Unet { checkpoint } => {
                if !checkpoint.is_file() {
                    return Err(PipelineError::MissingPath(checkpoint.clone()));
                }
                Box::new(UNetSegmenter::load(checkpoint)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub mode: PreprocessMode,
    pub folds: usize,
    pub patient_disjoint: bool,
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub workers: usize,
    pub segmenter: SegmenterChoice,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub tsne: TsneConfig,
    /// Class whose records the subgroup tables describe; `null` for all.
    pub subgroup_class: Option<Label>,
    /// Derive training class weights from each training fold's counts.
    pub weighted_loss: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            manifest: PathBuf::from("manifest.csv"),
            out: PathBuf::from("out"),
            mode: PreprocessMode::Segment,
            folds: 5,
            patient_disjoint: true,
            seed: 0,
            workers: 0,
            segmenter: SegmenterChoice::Heuristic,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            tsne: TsneConfig::default(),
            subgroup_class: Some(Label::Covid19),
            weighted_loss: true,
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        if !path.is_file() {
            return Err(PipelineError::MissingPath(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        anchor(&mut cfg.manifest);
        anchor(&mut cfg.out);
        if let SegmenterChoice::Unet { checkpoint } = &mut cfg.segmenter {
            anchor(checkpoint);
        }
        Ok(cfg)
    }

    /// Checks values and inputs and pushes the run seed into every stochastic
    /// component.
    pub fn validate(mut self) -> Result<Self, PipelineError> {
        if !self.manifest.is_file() {
            return Err(PipelineError::MissingPath(self.manifest.clone()));
        }
        if self.folds < 2 {
            return Err(PipelineError::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        self.network.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(self.train.validation_fraction > 0.0 && self.train.validation_fraction < 1.0) {
            return Err(PipelineError::Config("validation_fraction must lie in (0, 1)".into()));
        }
        if let SegmenterChoice::Unet { checkpoint } = &self.segmenter {
            if !checkpoint.is_file() {
                return Err(PipelineError::MissingPath(checkpoint.clone()));
            }
        }
        self.train.seed = self.seed;
        self.tsne.seed = self.seed;
        Ok(self)
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// Runs `f` on a pool with `workers` threads (0: runtime default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Output of the ingest stage.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub records: Vec<ImageRecord>,
    pub weights: ClassWeights,
    pub folds: Vec<FoldSplit>,
}

/// Loads the manifest, checks that every image exists, computes class
/// weights and folds, and writes `class_weights.json` and `folds.json`.
pub fn ingest(manifest: &Path, k: usize, seed: u64, patient_disjoint: bool, out: &Path) -> Result<Ingested, PipelineError> {
    let records = corpus::load_manifest(manifest)?;
    for r in &records {
        if !r.image_path.is_file() {
            return Err(record_err(&r.record_id, format!("image {} not found", r.image_path.display())));
        }
    }
    let weights = corpus::class_weights(&records)?;
    let folds = corpus::make_folds(&records, k, seed, patient_disjoint)?;
    fs::create_dir_all(out)?;
    let counts = corpus::class_counts(&records);
    let summary: BTreeMap<&str, serde_json::Value> = BTreeMap::from([
        ("counts", serde_json::json!({"control": counts[0], "pneumonia": counts[1], "covid19": counts[2]})),
        ("weights", serde_json::json!({"control": weights.0[0], "pneumonia": weights.0[1], "covid19": weights.0[2]})),
    ]);
    write_json(&out.join("class_weights.json"), &summary)?;
    corpus::write_folds(&out.join("folds.json"), &folds)?;
    Ok(Ingested { records, weights, folds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub record_id: String,
    pub reason: String,
}

/// Preprocesses every record into `out/processed/` (PNG per record plus a
/// manifest). Records whose segmentation fails are listed in
/// `out/skipped.json` and left out.
pub fn preprocess_records(
    records: &[ImageRecord],
    mode: PreprocessMode,
    segmenter: &dyn Segmenter,
    out: &Path,
) -> Result<Vec<ImageRecord>, PipelineError> {
    let dir = out.join("processed");
    fs::create_dir_all(&dir)?;
    let results: Vec<Result<Option<ImageRecord>, PipelineError>> = records
        .par_iter()
        .map(|r| {
            let img = GrayImage::load_png(&r.image_path).map_err(|e| record_err(&r.record_id, e))?;
            match lungseg::preprocess(&img, mode, segmenter) {
                Ok(processed) => {
                    let path = dir.join(format!("{}.png", r.record_id));
                    processed.save_png(&path).map_err(|e| record_err(&r.record_id, e))?;
                    Ok(Some(ImageRecord { image_path: path, ..r.clone() }))
                }
                Err(SegError::EmptyMask) => Ok(None),
                Err(e) => Err(record_err(&r.record_id, e)),
            }
        })
        .collect();
    let mut kept = Vec::with_capacity(records.len());
    let mut skipped = Vec::new();
    for (r, res) in records.iter().zip(results) {
        match res? {
            Some(p) => kept.push(p),
            None => {
                log::warn!("skipping {}: segmentation produced an empty mask", r.record_id);
                skipped.push(Skipped { record_id: r.record_id.clone(), reason: "empty lung mask".into() });
            }
        }
    }
    corpus::write_manifest(&dir.join("manifest.csv"), &kept)?;
    write_json(&out.join("skipped.json"), &skipped)?;
    Ok(kept)
}

/// Loads and fits every record to the network input side.
pub fn load_inputs(records: &[&ImageRecord], side: usize) -> Result<Vec<LabeledImage>, PipelineError> {
    records
        .par_iter()
        .map(|r| {
            let img = GrayImage::load_png(&r.image_path).map_err(|e| record_err(&r.record_id, e))?;
            Ok(LabeledImage { image: imgproc::fit_side(&img, side), label: r.label })
        })
        .collect()
}

fn select<'a>(records: &'a [ImageRecord], ids: &std::collections::BTreeSet<String>) -> Vec<&'a ImageRecord> {
    records.iter().filter(|r| ids.contains(&r.record_id)).collect()
}

/// Trains one fold: a stratified validation split of the training ids drives
/// the plateau schedule. Writes `checkpoints/fold_<k>.ckpt` and
/// `history_<k>.csv`.
pub fn train_fold(
    cfg: &PipelineConfig,
    records: &[ImageRecord],
    fold: &FoldSplit,
    out: &Path,
) -> Result<(Network, TrainHistory), PipelineError> {
    let train_recs = select(records, &fold.train_ids);
    if train_recs.is_empty() {
        return Err(PipelineError::Model(ModelError::EmptySet("training")));
    }
    let labels: Vec<Label> = train_recs.iter().map(|r| r.label).collect();
    let split_seed = derive_seed(cfg.seed, "validation", fold.fold_index as u64, 0);
    let (kept, held) = corpus::stratified_holdout(&labels, cfg.train.validation_fraction, split_seed);
    let fit: Vec<&ImageRecord> = kept.iter().map(|&i| train_recs[i]).collect();
    let val: Vec<&ImageRecord> = held.iter().map(|&i| train_recs[i]).collect();
    let side = cfg.network.input_side;
    let fit_set = load_inputs(&fit, side)?;
    let val_set = load_inputs(&val, side)?;

    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = derive_seed(cfg.seed, "train", fold.fold_index as u64, 0);
    if cfg.weighted_loss {
        let counts = corpus::class_counts(&fit.iter().map(|r| (*r).clone()).collect::<Vec<_>>());
        if counts.iter().all(|&c| c > 0) {
            train_cfg.class_weights = ClassWeights::from_counts(counts)?;
        }
    }
    let net = model::build_network(&cfg.network, derive_seed(cfg.seed, "init", fold.fold_index as u64, 0))?;
    log::info!("fold {}: training on {} images, validating on {}", fold.fold_index, fit_set.len(), val_set.len());
    let (net, history) = model::train(net, &fit_set, &val_set, &train_cfg)?;

    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let mut meta = CheckpointMeta { epoch: history.epochs.len(), seed: cfg.seed, ..Default::default() };
    meta.extra.insert("fold".into(), fold.fold_index.to_string());
    meta.extra.insert("mode".into(), cfg.mode.to_string());
    model::save_checkpoint(&ckpt_dir.join(format!("fold_{}.ckpt", fold.fold_index)), &net, &meta)?;
    history.save_csv(&out.join(format!("history_{}.csv", fold.fold_index)))?;
    Ok((net, history))
}

/// Processed records and folds for a config, reusing `folds.json` and
/// `processed/manifest.csv` from the output directory when present.
pub fn stage_inputs(cfg: &PipelineConfig) -> Result<(Vec<ImageRecord>, Vec<FoldSplit>), PipelineError> {
    let out = &cfg.out;
    let folds_path = out.join("folds.json");
    let folds = if folds_path.is_file() {
        corpus::read_folds(&folds_path)?
    } else {
        ingest(&cfg.manifest, cfg.folds, cfg.seed, cfg.patient_disjoint, out)?.folds
    };
    let processed_path = out.join("processed").join("manifest.csv");
    let records = if processed_path.is_file() {
        corpus::load_manifest(&processed_path)?
    } else {
        let segmenter = cfg.segmenter.build()?;
        preprocess_records(&corpus::load_manifest(&cfg.manifest)?, cfg.mode, segmenter.as_ref(), out)?
    };
    Ok((records, folds))
}

pub fn load_network(path: &Path) -> Result<Network, PipelineError> {
    if !path.is_file() {
        return Err(PipelineError::MissingPath(path.to_path_buf()));
    }
    Ok(model::load_checkpoint(path)?.network)
}

fn input_volume(net: &Network, img: &GrayImage, zscore: &imgproc::ZScoreParams) -> Volume {
    imgproc::normalize_volume(&imgproc::fit_side(img, net.config().input_side), zscore)
}

/// Eval-mode predictions for `records`, in order.
pub fn predict_records(
    net: &Network,
    records: &[&ImageRecord],
    zscore: &imgproc::ZScoreParams,
) -> Result<Vec<Prediction>, PipelineError> {
    records
        .par_iter()
        .map(|r| {
            let img = GrayImage::load_png(&r.image_path).map_err(|e| record_err(&r.record_id, e))?;
            let probs = net.probs(&input_volume(net, &img, zscore)).map_err(|e| record_err(&r.record_id, e))?;
            Ok(Prediction::new(&r.record_id, r.label, &probs))
        })
        .collect()
}

/// Writes one overlay per record, named after the predicted class.
pub fn gradcam_records(
    net: &Network,
    records: &[&ImageRecord],
    zscore: &imgproc::ZScoreParams,
    dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(dir)?;
    records
        .par_iter()
        .map(|r| {
            let img = GrayImage::load_png(&r.image_path).map_err(|e| record_err(&r.record_id, e))?;
            let fitted = imgproc::fit_side(&img, net.config().input_side);
            let x = imgproc::normalize_volume(&fitted, zscore);
            let pred = net.probs(&x).map_err(|e| record_err(&r.record_id, e))?.argmax();
            let cam = explain::grad_cam_volume(net, &x, pred).map_err(|e| record_err(&r.record_id, e))?;
            let path = dir.join(format!("{}_{}.png", r.record_id, pred));
            explain::save_overlay(&path, &fitted, &cam.heatmap)?;
            Ok(path)
        })
        .collect()
}

/// t-SNE of penultimate features; writes `points.csv` and two scatter plots
/// (by class and by source) next to it.
pub fn embed_records(
    net: &Network,
    records: &[&ImageRecord],
    zscore: &imgproc::ZScoreParams,
    tsne: &TsneConfig,
    points_csv: &Path,
    plots_dir: &Path,
) -> Result<Vec<explain::EmbeddingPoint>, PipelineError> {
    let feats: Vec<Vec<f64>> = records
        .par_iter()
        .map(|r| {
            let img = GrayImage::load_png(&r.image_path).map_err(|e| record_err(&r.record_id, e))?;
            net.penultimate(&input_volume(net, &img, zscore)).map_err(|e| record_err(&r.record_id, e))
        })
        .collect::<Result<_, PipelineError>>()?;
    let emb = explain::project_2d(&feats, tsne)?;
    let points = explain::embedding_points(&emb, records);
    if let Some(parent) = points_csv.parent() {
        fs::create_dir_all(parent)?;
    }
    explain::write_points_csv(points_csv, &points)?;
    fs::create_dir_all(plots_dir)?;
    fs::write(plots_dir.join("embed_label.svg"), evalkit::scatter_svg("t-SNE by class", &points, |p| p.label.to_string()))?;
    fs::write(plots_dir.join("embed_source.svg"), evalkit::scatter_svg("t-SNE by source", &points, |p| p.source.to_string()))?;
    Ok(points)
}

/// Everything `report` writes into `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub folds: Vec<MetricsReport>,
    /// Mean and sample std across folds (absent with a single prediction set).
    pub aggregate: Option<MetricsReport>,
    /// All predictions pooled.
    pub pooled: MetricsReport,
}

/// Metrics, confusion matrix, ROC data, subgroup tables and plots for one or
/// more prediction sets (one per fold).
pub fn write_report(
    fold_preds: &[Vec<Prediction>],
    records: &[ImageRecord],
    subgroup_class: Option<Label>,
    experiment: &str,
    out: &Path,
) -> Result<MetricsSummary, PipelineError> {
    if fold_preds.is_empty() {
        return Err(PipelineError::Eval(EvalError::Empty));
    }
    fs::create_dir_all(out)?;
    let plots = out.join("plots");
    fs::create_dir_all(&plots)?;
    let folds: Vec<MetricsReport> =
        fold_preds.iter().map(|p| evalkit::evaluate_predictions(p)).collect::<Result<_, _>>()?;
    let aggregate = if folds.len() >= 2 { Some(evalkit::aggregate_folds(&folds)?) } else { None };
    let all: Vec<Prediction> = fold_preds.iter().flatten().cloned().collect();
    let pooled = evalkit::evaluate_predictions(&all)?;
    let summary = MetricsSummary { folds, aggregate, pooled };
    write_json(&out.join("metrics.json"), &summary)?;

    let truth: Vec<Label> = all.iter().map(|p| p.truth).collect();
    let preds: Vec<Label> = all.iter().map(|p| p.pred).collect();
    let cm = evalkit::confusion(&preds, &truth)?;
    let mut buf = Vec::new();
    cm.write_csv(&mut buf)?;
    fs::write(out.join("confusion.csv"), buf)?;
    fs::write(plots.join("confusion.svg"), evalkit::confusion_svg(&format!("Confusion ({experiment})"), &cm))?;

    let probs: Vec<model::ClassProbs> = all.iter().map(|p| p.probs()).collect();
    let mut curves: Vec<(String, RocCurve)> = Vec::new();
    for label in Label::ALL {
        match evalkit::roc_auc(&probs, &truth, label) {
            Ok(curve) => {
                let mut buf = Vec::new();
                curve.write_csv(&mut buf)?;
                fs::write(out.join(format!("roc_{label}.csv")), buf)?;
                curves.push((label.to_string(), curve));
            }
            Err(EvalError::DegenerateLabels(_)) => log::warn!("no ROC for {label}: one-vs-rest split is degenerate"),
            Err(e) => return Err(e.into()),
        }
    }
    if !curves.is_empty() {
        let refs: Vec<(String, &RocCurve)> = curves.iter().map(|(n, c)| (n.clone(), c)).collect();
        fs::write(plots.join("roc.svg"), evalkit::roc_svg(&format!("ROC ({experiment})"), &refs))?;
        let avg = evalkit::average_roc(&curves.iter().map(|(_, c)| c.clone()).collect::<Vec<_>>(), 100);
        fs::write(
            plots.join("roc_average.svg"),
            evalkit::roc_svg(&format!("Average ROC ({experiment})"), &[(experiment.to_string(), &avg)]),
        )?;
    }

    let by_id: HashMap<&str, &ImageRecord> = records.iter().map(|r| (r.record_id.as_str(), r)).collect();
    let recs: Vec<&ImageRecord> = all
        .iter()
        .map(|p| by_id.get(p.record_id.as_str()).copied().ok_or_else(|| EvalError::UnknownRecord(p.record_id.clone())))
        .collect::<Result<_, _>>()?;
    let mut tables = Vec::new();
    for factor in Factor::ALL {
        let table = evalkit::subgroup_report(&preds, &truth, &recs, factor, subgroup_class)?;
        let mut buf = Vec::new();
        evalkit::write_subgroup_csv(&mut buf, &[(experiment.to_string(), vec![table.clone()])])?;
        fs::write(out.join(format!("subgroup_{factor}.csv")), buf)?;
        tables.push(table);
    }
    let mut buf = Vec::new();
    evalkit::write_subgroup_csv(&mut buf, &[(experiment.to_string(), tables)])?;
    fs::write(out.join("subgroups.csv"), buf)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: PipelineConfig,
    pub records: usize,
    pub skipped: usize,
}

/// Runs every stage in order.
pub fn run(cfg: PipelineConfig) -> Result<MetricsSummary, PipelineError> {
    let cfg = cfg.validate()?;
    let workers = cfg.workers;
    with_workers(workers, move || run_stages(&cfg))?
}

fn run_stages(cfg: &PipelineConfig) -> Result<MetricsSummary, PipelineError> {
    let out = &cfg.out;
    fs::create_dir_all(out)?;
    let ingested = ingest(&cfg.manifest, cfg.folds, cfg.seed, cfg.patient_disjoint, out)?;
    let segmenter = cfg.segmenter.build()?;
    let processed = preprocess_records(&ingested.records, cfg.mode, segmenter.as_ref(), out)?;

    let pred_dir = out.join("predictions");
    fs::create_dir_all(&pred_dir)?;
    let mut fold_preds = Vec::with_capacity(ingested.folds.len());
    let mut fold0 = None;
    for fold in &ingested.folds {
        let (net, _) = train_fold(cfg, &processed, fold, out)?;
        let test = select(&processed, &fold.test_ids);
        let preds = predict_records(&net, &test, &cfg.train.zscore)?;
        evalkit::write_predictions(&pred_dir.join(format!("fold_{}.csv", fold.fold_index)), &preds)?;
        gradcam_records(&net, &test, &cfg.train.zscore, &out.join("gradcam"))?;
        fold_preds.push(preds);
        if fold.fold_index == 0 {
            fold0 = Some((net, test));
        }
    }
    let all: Vec<Prediction> = fold_preds.iter().flatten().cloned().collect();
    evalkit::write_predictions(&pred_dir.join("all.csv"), &all)?;
    let summary = write_report(&fold_preds, &processed, cfg.subgroup_class, cfg.mode.as_str(), out)?;

    if let Some((net, test)) = fold0 {
        embed_records(&net, &test, &cfg.train.zscore, &cfg.tsne, &out.join("embed").join("points.csv"), &out.join("plots"))?;
    }
    write_json(
        &out.join("run_manifest.json"),
        &RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            config_sha256: cfg.sha256(),
            config: cfg.clone(),
            records: ingested.records.len(),
            skipped: ingested.records.len() - processed.len(),
        },
    )?;
    Ok(summary)
}
