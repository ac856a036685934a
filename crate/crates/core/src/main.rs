use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cxrnet::corpus::{self, Label};
use cxrnet::evalkit;
use cxrnet::imgproc::{GrayImage, LungMask, ZScoreParams};
use cxrnet::lungseg::{self, PreprocessMode, UNetConfig, UNetTrainConfig};
use cxrnet::model::CheckpointMeta;
use cxrnet::phantom::{self, PhantomConfig};
use cxrnet::pipeline::{self, PipelineConfig, PipelineError, SegmenterChoice};

#[derive(Parser)]
#[command(name = "cxrnet", version, about = "Chest radiograph classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON pipeline config; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<PreprocessMode>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// UNet checkpoint to segment with instead of the heuristic segmenter.
    #[arg(long)]
    unet: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.manifest {
            cfg.manifest = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        if let Some(v) = self.folds {
            cfg.folds = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = &self.unet {
            cfg.segmenter = SegmenterChoice::Unet { checkpoint: v.clone() };
        }
        cfg.validate()
    }
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Restrict to the test records of this fold.
    #[arg(long, requires = "folds_file")]
    fold: Option<usize>,
    /// folds.json written by `ingest`.
    #[arg(long = "folds-file")]
    folds_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic lung-phantom corpus with ground-truth masks.
    MakePhantoms {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        side: usize,
        /// Extra lung brightness per class index, making classes easier to tell apart.
        #[arg(long, default_value_t = 0.0)]
        class_brightness: f64,
    },
    /// Validate the manifest and write folds.json and class_weights.json.
    Ingest(ConfigArgs),
    /// Write processed PNGs, their manifest and skipped.json.
    Preprocess(ConfigArgs),
    /// Train one fold.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        fold: usize,
    },
    /// Write predictions for a manifest (or one fold's test records).
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write Grad-CAM overlays named <record_id>_<class>.png.
    Gradcam {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a t-SNE embedding of penultimate features as CSV.
    Embed {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Metrics, confusion matrix, ROC data, subgroup tables and plots.
    Report {
        /// Prediction CSVs, one per fold.
        #[arg(long, required = true, num_args = 1..)]
        preds: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Class the subgroup tables describe ("all" for every record).
        #[arg(long, default_value = "covid19")]
        subgroup_class: String,
        #[arg(long, default_value = "experiment")]
        name: String,
    },
    /// Run every stage.
    Run(ConfigArgs),
    /// Train the UNet lung segmenter on a manifest with masks/<record_id>.png.
    TrainUnet {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding masks/; defaults to the manifest's directory.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        side: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn model_records(args: &ModelArgs) -> Result<Vec<corpus::ImageRecord>, PipelineError> {
    let records = corpus::load_manifest(&args.manifest)?;
    match (args.fold, &args.folds_file) {
        (Some(k), Some(path)) => {
            let folds = corpus::read_folds(path)?;
            let fold = folds
                .iter()
                .find(|f| f.fold_index == k)
                .ok_or_else(|| PipelineError::Config(format!("fold {k} not in {}", path.display())))?;
            Ok(records.into_iter().filter(|r| fold.test_ids.contains(&r.record_id)).collect())
        }
        _ => Ok(records),
    }
}

fn unet_pairs(manifest: &Path, masks: &Path) -> Result<Vec<(GrayImage, LungMask)>, PipelineError> {
    corpus::load_manifest(manifest)?
        .iter()
        .map(|r| {
            let mask_path = phantom::mask_path(masks, &r.record_id);
            if !mask_path.is_file() {
                return Err(PipelineError::MissingPath(mask_path));
            }
            Ok((GrayImage::load_png(&r.image_path)?, LungMask::load_png(&mask_path)?))
        })
        .collect()
}

fn execute(command: Command) -> Result<(), PipelineError> {
    let zscore = ZScoreParams::IMAGENET;
    match command {
        Command::MakePhantoms { out, per_class, seed, side, class_brightness } => {
            let cfg = PhantomConfig { width: side, height: side, class_brightness, ..Default::default() };
            let records = phantom::write_corpus(&out, per_class, seed, &cfg)?;
            println!("wrote {} phantoms to {}", records.len(), out.join("manifest.csv").display());
        }
        Command::Ingest(args) => {
            let cfg = args.resolve()?;
            let ing = pipeline::ingest(&cfg.manifest, cfg.folds, cfg.seed, cfg.patient_disjoint, &cfg.out)?;
            println!("{} records, {} folds", ing.records.len(), ing.folds.len());
        }
        Command::Preprocess(args) => {
            let cfg = args.resolve()?;
            let records = corpus::load_manifest(&cfg.manifest)?;
            let segmenter = cfg.segmenter.build()?;
            let kept = pipeline::with_workers(cfg.workers, || {
                pipeline::preprocess_records(&records, cfg.mode, segmenter.as_ref(), &cfg.out)
            })??;
            println!("processed {} of {} records", kept.len(), records.len());
        }
        Command::Train { cfg, fold } => {
            let cfg = cfg.resolve()?;
            pipeline::with_workers(cfg.workers, || -> Result<(), PipelineError> {
                let (records, folds) = pipeline::stage_inputs(&cfg)?;
                let split = folds
                    .iter()
                    .find(|f| f.fold_index == fold)
                    .ok_or_else(|| PipelineError::Config(format!("fold {fold} out of range (have {})", folds.len())))?;
                let (_, history) = pipeline::train_fold(&cfg, &records, split, &cfg.out)?;
                if let Some(last) = history.epochs.last() {
                    println!("fold {fold}: final train loss {:.4}, val loss {:.4}", last.train_loss, last.val_loss);
                }
                Ok(())
            })??;
        }
        Command::Eval { model, out } => {
            let net = pipeline::load_network(&model.checkpoint)?;
            let records = model_records(&model)?;
            let refs: Vec<_> = records.iter().collect();
            let preds = pipeline::with_workers(model.workers, || pipeline::predict_records(&net, &refs, &zscore))??;
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent)?;
            }
            evalkit::write_predictions(&out, &preds)?;
        }
        Command::Gradcam { model, out } => {
            let net = pipeline::load_network(&model.checkpoint)?;
            let records = model_records(&model)?;
            let refs: Vec<_> = records.iter().collect();
            let written =
                pipeline::with_workers(model.workers, || pipeline::gradcam_records(&net, &refs, &zscore, &out))??;
            println!("wrote {} overlays", written.len());
        }
        Command::Embed { model, out, perplexity, iterations, seed } => {
            let net = pipeline::load_network(&model.checkpoint)?;
            let records = model_records(&model)?;
            let refs: Vec<_> = records.iter().collect();
            let tsne = cxrnet::explain::TsneConfig { perplexity, iterations, seed, ..Default::default() };
            let plots = out.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
            pipeline::with_workers(model.workers, || pipeline::embed_records(&net, &refs, &zscore, &tsne, &out, &plots))??;
        }
        Command::Report { preds, manifest, out, subgroup_class, name } => {
            let records = corpus::load_manifest(&manifest)?;
            let class = if subgroup_class.eq_ignore_ascii_case("all") {
                None
            } else {
                Some(subgroup_class.parse::<Label>().map_err(|e| PipelineError::Config(e.to_string()))?)
            };
            let fold_preds = preds
                .iter()
                .map(|p| {
                    if !p.is_file() {
                        return Err(PipelineError::MissingPath(p.clone()));
                    }
                    Ok(evalkit::read_predictions(p)?)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let summary = pipeline::write_report(&fold_preds, &records, class, &name, &out)?;
            println!("accuracy {:.4}, balanced accuracy {:.4}", summary.pooled.accuracy, summary.pooled.balanced_accuracy);
        }
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let out = cfg.out.clone();
            let summary = pipeline::run(cfg)?;
            println!(
                "accuracy {:.4}, balanced accuracy {:.4}; artifacts in {}",
                summary.pooled.accuracy,
                summary.pooled.balanced_accuracy,
                out.display()
            );
        }
        Command::TrainUnet { manifest, masks, out, side, epochs, seed } => {
            if !manifest.is_file() {
                return Err(PipelineError::MissingPath(manifest));
            }
            let masks = masks.unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).to_path_buf());
            let pairs = unet_pairs(&manifest, &masks)?;
            let config = UNetConfig { input_side: side, ..Default::default() };
            let train = UNetTrainConfig { epochs, seed, ..Default::default() };
            let (net, losses) = lungseg::train_unet(&config, &pairs, &train)?;
            net.save(&out, &CheckpointMeta { epoch: epochs, seed, ..Default::default() })?;
            println!("final loss {:.4}", losses.last().copied().unwrap_or(f64::NAN));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
