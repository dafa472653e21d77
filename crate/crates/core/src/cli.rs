//! The `fer` command line: train, eval, predict, detect and tune.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{crop_resize, decode_pnm, images_to_batch, load_fer_csv, write_pgm, Dataset, GrayImage, Rect, Split};
use crate::error::{Error, Result};
use crate::haar::{detect_multiscale, load_cascade, CascadeModel, DetectParams, DetectionBox};
use crate::nn::{predict_class, Network, NetworkSpec};
use crate::store::{read_model, save_model, ModelMetadata};
use crate::train::{
    confusion_matrix, curves_csv, evaluate, metrics_report, random_search, train_with, trials_table, SearchSpace,
    TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "fer", version, about = "Face detection and facial expression recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network on a FER-2013 style CSV.
    Train(TrainArgs),
    /// Evaluate a saved model on a labelled split.
    Eval(EvalArgs),
    /// Detect faces and classify their expressions.
    Predict(PredictArgs),
    /// Detect faces only.
    Detect(DetectArgs),
    /// Random-search hyperparameter tuning.
    Tune(TuneArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON network spec replacing the canonical architecture.
    #[arg(long)]
    pub arch: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Validate on this fraction of the training rows instead of PublicTest.
    #[arg(long)]
    pub holdout: Option<f64>,
    /// Use only the first N training rows.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub no_augment: bool,
    /// Per-epoch learning curves CSV.
    #[arg(long)]
    pub curves: Option<PathBuf>,
    /// Leave the creation time out of the model file.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    Train,
    Test,
    Public,
    Private,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: EvalSplit,
    /// Confusion matrix CSV.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    /// Per-class metrics CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectOptions {
    #[arg(long, default_value_t = 1.1, value_parser = parse_scale_factor)]
    pub scale_factor: f64,
    #[arg(long, default_value_t = 3)]
    pub min_neighbors: usize,
    /// Smallest face side in pixels.
    #[arg(long, default_value_t = 24)]
    pub min_size: usize,
}

impl DetectOptions {
    pub fn params(&self) -> DetectParams {
        DetectParams {
            scale_factor: self.scale_factor,
            min_neighbors: self.min_neighbors,
            min_size: (self.min_size, self.min_size),
            ..DetectParams::default()
        }
    }
}

fn parse_scale_factor(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 1.0 {
        Ok(v)
    } else {
        Err(format!("scale factor must be greater than 1, got {v}"))
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required_unless_present = "no_detect")]
    pub cascade: Option<PathBuf>,
    /// PGM/PPM files or directories of them.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// JSON records file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Treat each whole image as one face.
    #[arg(long)]
    pub no_detect: bool,
    /// Write every 48x48 crop as a PGM into this directory.
    #[arg(long)]
    pub dump_crops: Option<PathBuf>,
    #[command(flatten)]
    pub detect: DetectOptions,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub cascade: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub detect: DetectOptions,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub budget: usize,
    /// JSON search space; unspecified ranges keep their defaults.
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON training config for the settings that are not searched.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub no_augment: bool,
    /// Ranked CSV report; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// One classified face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub source: String,
    #[serde(rename = "box")]
    pub face: Rect,
    /// Class probabilities in class-index order.
    pub probabilities: Vec<f64>,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub source: String,
    pub boxes: Vec<DetectionBox>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_text(path, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn load_image(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_pnm(&bytes)?.into_gray())
}

/// Expands directories into their `.pgm` / `.ppm` files, sorted by name.
pub fn collect_images(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(|e| Error::io(input, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("ppm"))
                })
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(input.clone());
        }
    }
    Ok(out)
}

/// Resolves the training config: flag, then config file, then defaults.
pub fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.lr {
        config.learning_rate = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if args.threads.is_some() {
        config.threads = args.threads;
    }
    if args.no_augment {
        config.augment = None;
    }
    config.validate()?;
    Ok(config)
}

fn architecture(arch: Option<&Path>, config: &TrainConfig) -> Result<NetworkSpec> {
    match arch {
        Some(path) => {
            let spec: NetworkSpec = read_json(path)?;
            Ok(spec.with_dropout_rates(config.conv_dropout, config.dense_dropout))
        }
        None => Ok(config.network_spec()),
    }
}

fn training_sets(data: &Path, holdout: Option<f64>, limit: Option<usize>, seed: u64) -> Result<(Dataset, Dataset)> {
    let splits = load_fer_csv(data)?;
    let mut train = splits.train.clone();
    if let Some(n) = limit {
        train = train.truncated(n);
    }
    match holdout {
        Some(fraction) => train.split_holdout(fraction, seed),
        None => {
            let val = Dataset::new(Split::Validation, splits.public_test().to_vec());
            if val.is_empty() {
                return Err(Error::Data(format!(
                    "{} has no PublicTest rows; pass --holdout to validate on training rows",
                    data.display()
                )));
            }
            Ok((train, val))
        }
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = resolve_train_config(args)?;
    let spec = architecture(args.arch.as_deref(), &config)?;
    let (train_set, val_set) = training_sets(&args.data, args.holdout, args.limit, config.seed)?;
    log::info!(
        "training on {} samples, validating on {}, {} epochs of batch {} at lr {}",
        train_set.len(),
        val_set.len(),
        config.epochs,
        config.batch_size,
        config.learning_rate
    );
    let mut net = Network::<f32>::new(spec, config.seed)?;
    let records = train_with(&mut net, &train_set, &val_set, &config, |r| {
        log::info!(
            "epoch {}: loss {:.4} acc {:.4} | val loss {:.4} acc {:.4}",
            r.epoch,
            r.train_loss,
            r.train_accuracy,
            r.val_loss,
            r.val_accuracy
        );
    })?;
    let mut metadata = ModelMetadata::default().with_training(&config);
    if !args.no_timestamp {
        metadata = metadata.stamped();
    }
    save_model(&net, metadata, &args.out)?;
    if let Some(path) = &args.curves {
        write_text(path, &curves_csv(&records))?;
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let (net, metadata) = read_model(&args.model)?;
    let splits = load_fer_csv(&args.data)?;
    let dataset = match args.split {
        EvalSplit::Train => splits.train.clone(),
        EvalSplit::Test => splits.test.clone(),
        EvalSplit::Public => Dataset::new(Split::Test, splits.public_test().to_vec()),
        EvalSplit::Private => Dataset::new(Split::Test, splits.private_test().to_vec()),
    };
    let eval = evaluate(&net, &dataset)?;
    let cm = confusion_matrix(&eval.predictions, &dataset.labels(), net.num_classes())?;
    let report = metrics_report(&cm);
    if let Some(path) = &args.confusion {
        write_text(path, &cm.to_csv(&metadata.class_names))?;
    }
    if let Some(path) = &args.report {
        write_text(path, &report.to_csv(&metadata.class_names))?;
    }
    Ok(format!("loss {:.4}\n\n{}", eval.loss, report.to_table(&metadata.class_names)))
}

/// Classifies faces in one grayscale image. With `cascade` set, faces are
/// detected first; otherwise the whole image is one face.
pub fn classify_image(
    net: &Network<f32>,
    class_names: &[String],
    cascade: Option<(&CascadeModel, &DetectParams)>,
    image: &GrayImage,
    source: &str,
) -> Result<(Vec<PredictionRecord>, Vec<GrayImage>)> {
    let faces: Vec<Rect> = match cascade {
        Some((c, params)) => detect_multiscale(c, image, params)?.iter().map(DetectionBox::rect).collect(),
        None => vec![Rect::new(0, 0, image.width(), image.height())],
    };
    if faces.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let crops = faces.iter().map(|r| crop_resize(image, *r)).collect::<Result<Vec<_>>>()?;
    let probs = net.predict(&images_to_batch(crops.iter())?)?;
    let records = faces
        .iter()
        .enumerate()
        .map(|(i, face)| {
            let row = probs.row(i);
            let label = predict_class(row).0;
            PredictionRecord {
                source: source.to_string(),
                face: *face,
                probabilities: row.iter().map(|&p| f64::from(p)).collect(),
                label: class_names.get(label).cloned().unwrap_or_else(|| label.to_string()),
            }
        })
        .collect();
    Ok((records, crops))
}

pub fn cmd_predict(args: &PredictArgs) -> Result<Vec<PredictionRecord>> {
    let (net, metadata) = read_model(&args.model)?;
    let cascade = match (&args.cascade, args.no_detect) {
        (Some(path), false) => Some(load_cascade(path)?),
        (None, false) => return Err(Error::Arg("--cascade is required unless --no-detect is given".into())),
        (_, true) => None,
    };
    let params = args.detect.params();
    if let Some(dir) = &args.dump_crops {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let files = collect_images(&args.input)?;
    let mut records = Vec::new();
    let mut failures = 0;
    for (fi, path) in files.iter().enumerate() {
        let source = path.display().to_string();
        let outcome = load_image(path).and_then(|image| {
            classify_image(&net, &metadata.class_names, cascade.as_ref().map(|c| (c, &params)), &image, &source)
        });
        match outcome {
            Ok((found, crops)) => {
                if let Some(dir) = &args.dump_crops {
                    for (ci, crop) in crops.iter().enumerate() {
                        write_pgm(crop, dir.join(format!("{fi:04}_{ci:02}.pgm")))?;
                    }
                }
                records.extend(found);
            }
            Err(e) => {
                log::error!("{source}: {e}");
                failures += 1;
            }
        }
    }
    if files.is_empty() || failures == files.len() {
        return Err(Error::Data("no input image could be processed".into()));
    }
    Ok(records)
}

pub fn cmd_detect(args: &DetectArgs) -> Result<Vec<DetectionRecord>> {
    let cascade = load_cascade(&args.cascade)?;
    let params = args.detect.params();
    collect_images(&args.input)?
        .iter()
        .map(|path| {
            let image = load_image(path)?;
            Ok(DetectionRecord {
                source: path.display().to_string(),
                boxes: detect_multiscale(&cascade, &image, &params)?,
            })
        })
        .collect()
}

pub fn cmd_tune(args: &TuneArgs) -> Result<String> {
    let mut base = match &args.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    if args.no_augment {
        base.augment = None;
    }
    let space: SearchSpace = match &args.space {
        Some(path) => read_json(path)?,
        None => SearchSpace::default(),
    };
    let spec = architecture(args.arch.as_deref(), &base)?;
    let (train_set, val_set) = training_sets(&args.data, Some(args.holdout), args.limit, args.seed)?;
    let trials = random_search(&spec, &space, args.budget, &train_set, &val_set, &base, args.seed)?;
    Ok(trials_table(&trials))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => {
            let text = cmd_eval(a)?;
            emit(None, &text)
        }
        Command::Predict(a) => emit(a.out.as_deref(), &to_json(&cmd_predict(a)?)?),
        Command::Detect(a) => emit(a.out.as_deref(), &to_json(&cmd_detect(a)?)?),
        Command::Tune(a) => emit(a.out.as_deref(), &cmd_tune(a)?),
    }
}

/// Parses `args`, runs the command and maps failures to a nonzero status.
pub fn main_with_args<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parser_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn scale_factor_one_is_usage_error() {
        let err = Cli::try_parse_from(["fer", "detect", "--cascade", "c.xml", "--input", "a.pgm", "--scale-factor", "1.0"])
            .unwrap_err();
        assert_eq!(err.kind(), clap::error::ErrorKind::ValueValidation);
    }

    #[test]
    fn flag_beats_config_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"epochs": 7, "batch_size": 16}"#).unwrap();
        let cli = Cli::try_parse_from([
            "fer", "train", "--data", "d.csv", "--out", "m.json", "--config", cfg.to_str().unwrap(), "--epochs", "3",
        ])
        .unwrap();
        let Command::Train(args) = cli.command else { panic!() };
        let c = resolve_train_config(&args).unwrap();
        assert_eq!((c.epochs, c.batch_size, c.learning_rate), (3, 16, 0.001));

        let cli = Cli::try_parse_from(["fer", "train", "--data", "d.csv", "--out", "m.json"]).unwrap();
        let Command::Train(args) = cli.command else { panic!() };
        let c = resolve_train_config(&args).unwrap();
        assert_eq!((c.epochs, c.batch_size, c.learning_rate), (80, 120, 0.001));
    }
}
