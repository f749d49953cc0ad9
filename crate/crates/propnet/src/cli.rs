//! Command-line interface for the `propnet` binary.
//!
//! The binary is a thin shell: every subcommand resolves its inputs (flags
//! first, then an optional JSON run-configuration file, then defaults) and
//! delegates to the library. Exit codes are part of the contract:
//!
//! * 0 — success
//! * 1 — a requested numerical tolerance was not met (`gradcheck`)
//! * 2 — configuration error (bad flags, missing paths, malformed config)
//! * 3 — generation failure (antenna placement or simulation gave up)
//! * 4 — malformed or shape-inconsistent data file
//! * 5 — a requested dataset split is empty

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::antenna::{load_pattern, AntennaError};
use crate::empirical::{calibrate_spm, CitySize, EmpiricalError};
use crate::geodata::GeodataError;
use crate::harness::{
    self, BaselineConfig, BaselineKind, Dataset, FinetuneConfig, HarnessError, Split, SynthConfig,
    TrainConfig, MANIFEST_NAME,
};
use crate::net::{grad_check, save_weights, FeatureMap, GradCheckConfig, LossKind, NetError};
use crate::raysim::{read_matrix, write_matrix, ClutterLossTable, PathLossMatrix, RaysimError};
use crate::tensor::{read_tensor, TensorError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_TOLERANCE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GENERATION: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_EMPTY_SPLIT: i32 = 5;

/// Radio path-loss modelling toolkit: dataset synthesis, model training,
/// empirical baselines, and rendering.
#[derive(Debug, Parser)]
#[command(name = "propnet", version, propagate_version = true)]
pub struct Cli {
    /// JSON run-configuration file; explicit flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from GIS maps, labelled by the ray simulator.
    Synth(SynthArgs),
    /// Train a model on a dataset and save weights plus a training history CSV.
    Train(TrainArgs),
    /// Evaluate a saved model over a dataset split (prints `rmse_db=<value>` last).
    Eval(EvalArgs),
    /// Run a saved model on one input tensor and write the predicted matrix.
    Predict(PredictArgs),
    /// Fine-tune saved weights on a dataset split; originals are left untouched.
    Finetune(FinetuneArgs),
    /// Evaluate an empirical or simulator baseline over a split.
    Baseline(BaselineArgs),
    /// Render a path-loss matrix, or a model's first-layer filters, as images.
    Render(RenderArgs),
    /// Compare analytic gradients against finite differences on a small model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory with one subdirectory per map (clutter/building/terrain grids).
    #[arg(long, value_name = "DIR")]
    pub maps: Option<PathBuf>,
    /// Output dataset directory (manifest plus sample files).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of samples to generate.
    #[arg(long, value_name = "N")]
    pub n: Option<usize>,
    /// Square patch side in pixels.
    #[arg(long, value_name = "PIXELS")]
    pub patch: Option<usize>,
    /// RNG seed; the same seed reproduces the dataset byte for byte.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict labels to a sparse road-like measurement mask.
    #[arg(long)]
    pub field_mode: bool,
    /// Target mask coverage fraction in field mode.
    #[arg(long, value_name = "FRACTION")]
    pub coverage: Option<f64>,
    /// Split tag for the generated samples: train|test|calibrate|holdout.
    #[arg(long, value_name = "SPLIT")]
    pub split: Option<String>,
    /// Clutter-loss table CSV (`code,loss_db` rows for codes 0-21).
    #[arg(long, value_name = "FILE")]
    pub clutter_table: Option<PathBuf>,
    /// Directory of radiation-pattern files to sample antennas from.
    #[arg(long, value_name = "DIR")]
    pub patterns: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory containing a manifest.
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Output weights file; the history CSV is written next to it.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Loss function: mae|mse.
    #[arg(long)]
    pub loss: Option<String>,
    /// Enable or disable flip/rotation augmentation (true|false).
    #[arg(long, value_name = "BOOL")]
    pub augment: Option<bool>,
    /// Channels of the first encoder stage.
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Number of encoder/decoder stages.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write a checkpoint every N epochs (0 disables).
    #[arg(long, value_name = "N")]
    pub checkpoint_every: Option<usize>,
    /// Checkpoint directory (default: `checkpoints` next to the output file).
    #[arg(long, value_name = "DIR")]
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop early once the evaluation RMSE (dB) drops to this value.
    #[arg(long, value_name = "DB")]
    pub target_rmse_db: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory containing a manifest.
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Weights file to evaluate.
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Split to evaluate on (default: test).
    #[arg(long, value_name = "SPLIT")]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Weights file to run.
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Input tensor file.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Output path-loss matrix file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Dataset directory containing a manifest.
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Weights file to start from (left unmodified).
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Output weights file (default: `<weights>.finetuned.plw` alongside the input).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Split to fine-tune on (default: calibrate).
    #[arg(long, value_name = "SPLIT")]
    pub split: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate (default: one tenth of the training rate).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Loss function: mae|mse.
    #[arg(long)]
    pub loss: Option<String>,
    /// Enable or disable flip/rotation augmentation (true|false).
    #[arg(long, value_name = "BOOL")]
    pub augment: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Baseline model: hata|spm|raysim.
    #[arg(value_name = "MODEL")]
    pub model: String,
    /// Dataset directory containing a manifest.
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Split to evaluate on (default: test).
    #[arg(long, value_name = "SPLIT")]
    pub split: Option<String>,
    /// Map directory; when given, baselines run on exact GIS patches instead
    /// of patches reconstructed from the stored input tensors.
    #[arg(long, value_name = "DIR")]
    pub maps: Option<PathBuf>,
    /// Calibrate SPM coefficients on this split before evaluating (spm only).
    #[arg(long, value_name = "SPLIT")]
    pub calibrate_on: Option<String>,
    /// City size for the Hata model: small-medium|large.
    #[arg(long, value_name = "CITY")]
    pub city: Option<String>,
    /// Clutter-loss table CSV for the raysim baseline.
    #[arg(long, value_name = "FILE")]
    pub clutter_table: Option<PathBuf>,
    /// Write one predicted matrix per sample into this directory.
    #[arg(long, value_name = "DIR")]
    pub write_matrices: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Path-loss matrix file to render.
    #[arg(long, value_name = "FILE")]
    pub matrix: Option<PathBuf>,
    /// Weights file whose first-layer filters are rendered instead.
    #[arg(long, value_name = "FILE")]
    pub filters: Option<PathBuf>,
    /// Output image; `.pgm` renders grayscale, `.ppm` an 8-stop palette.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Output directory for filter images.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Lower end of the rendered dB range.
    #[arg(long, value_name = "DB", default_value_t = 60.0)]
    pub min_db: f64,
    /// Upper end of the rendered dB range.
    #[arg(long, value_name = "DB", default_value_t = 160.0)]
    pub max_db: f64,
    /// Integer upscale factor for filter images.
    #[arg(long, default_value_t = 8)]
    pub scale: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Number of encoder/decoder stages of the probe model.
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    /// Channels of the first encoder stage of the probe model.
    #[arg(long, default_value_t = 4)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    /// Loss function: mae|mse.
    #[arg(long, default_value = "mse")]
    pub loss: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Number of randomly chosen parameters to perturb.
    #[arg(long, default_value_t = 200)]
    pub num_params: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Maximum accepted relative error (default: 1e-5 for mse, 1e-4 for mae).
    #[arg(long)]
    pub tol: Option<f64>,
}

/// Optional defaults loaded from `--config`. Flags always win.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub maps_dir: Option<PathBuf>,
    pub patterns_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub dataset_dir: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub clutter_table: Option<PathBuf>,
    pub base_channels: Option<usize>,
    pub depth: Option<usize>,
    pub loss: Option<String>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub augment: Option<bool>,
    pub seed: Option<u64>,
    pub n_samples: Option<usize>,
    pub patch: Option<usize>,
    pub field_mode: Option<bool>,
    pub coverage: Option<f64>,
    pub split: Option<String>,
}

/// A command failure carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

fn geodata_code(err: &GeodataError) -> i32 {
    match err {
        GeodataError::Io { .. }
        | GeodataError::InvalidResolution(_)
        | GeodataError::AntennaOutsideMap { .. }
        | GeodataError::PatchTooSmall { .. } => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

fn tensor_code(err: &TensorError) -> i32 {
    match err {
        TensorError::Io { .. } => EXIT_CONFIG,
        TensorError::ScaleOverflow { .. } => EXIT_GENERATION,
        TensorError::Antenna(_) => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

fn raysim_code(err: &RaysimError) -> i32 {
    match err {
        RaysimError::Io { .. } | RaysimError::InvalidClutterTable(_) => EXIT_CONFIG,
        RaysimError::Format { .. } | RaysimError::ShapeMismatch(_) => EXIT_DATA,
        _ => EXIT_GENERATION,
    }
}

fn net_code(err: &NetError) -> i32 {
    match err {
        NetError::Io { .. } | NetError::InvalidArch(_) => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

fn empirical_code(err: &EmpiricalError) -> i32 {
    match err {
        EmpiricalError::Io { .. } => EXIT_CONFIG,
        EmpiricalError::Parse { .. } => EXIT_DATA,
        EmpiricalError::RankDeficient { .. } => EXIT_GENERATION,
        _ => EXIT_CONFIG,
    }
}

fn antenna_code(err: &AntennaError) -> i32 {
    match err {
        AntennaError::Io { .. } => EXIT_CONFIG,
        AntennaError::Parse { .. } | AntennaError::MissingCut { .. } => EXIT_DATA,
        _ => EXIT_CONFIG,
    }
}

fn harness_code(err: &HarnessError) -> i32 {
    match err {
        HarnessError::Config(_) | HarnessError::Io { .. } => EXIT_CONFIG,
        HarnessError::PlacementExhausted { .. } => EXIT_GENERATION,
        HarnessError::EmptySplit(_) => EXIT_EMPTY_SPLIT,
        HarnessError::InvalidDataset(_) | HarnessError::Manifest { .. } => EXIT_DATA,
        HarnessError::Geodata(e) => geodata_code(e),
        HarnessError::Antenna(e) => antenna_code(e),
        HarnessError::Tensor(e) => tensor_code(e),
        HarnessError::Raysim(e) => raysim_code(e),
        HarnessError::Net(e) => net_code(e),
        HarnessError::Empirical(e) => empirical_code(e),
    }
}

impl From<HarnessError> for Failure {
    fn from(err: HarnessError) -> Self {
        Failure {
            code: harness_code(&err),
            message: err.to_string(),
        }
    }
}

macro_rules! failure_via_harness {
    ($($ty:ty),* $(,)?) => {
        $(impl From<$ty> for Failure {
            fn from(err: $ty) -> Self {
                Failure::from(HarnessError::from(err))
            }
        })*
    };
}

failure_via_harness!(
    GeodataError,
    AntennaError,
    TensorError,
    RaysimError,
    NetError,
    EmpiricalError,
);

/// Run a parsed invocation and return the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32, Failure> {
    let rc = load_run_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(args) => cmd_synth(args, &rc),
        Command::Train(args) => cmd_train(args, &rc),
        Command::Eval(args) => cmd_eval(args, &rc),
        Command::Predict(args) => cmd_predict(args, &rc),
        Command::Finetune(args) => cmd_finetune(args, &rc),
        Command::Baseline(args) => cmd_baseline(args, &rc),
        Command::Render(args) => cmd_render(args, &rc),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::config(format!("{}: invalid run config: {e}", path.display())))
}

fn require(value: Option<PathBuf>, flag: &str, config_key: &str) -> Result<PathBuf, Failure> {
    value.ok_or_else(|| {
        Failure::config(format!(
            "missing {flag}; pass the flag or set `{config_key}` in --config"
        ))
    })
}

fn parse_split(
    flag: &Option<String>,
    cfg: &Option<String>,
    default: Split,
) -> Result<Split, Failure> {
    match flag.as_deref().or(cfg.as_deref()) {
        None => Ok(default),
        Some(s) => s.parse::<Split>().map_err(Failure::config),
    }
}

fn parse_loss(
    flag: &Option<String>,
    cfg: &Option<String>,
    default: LossKind,
) -> Result<LossKind, Failure> {
    match flag.as_deref().or(cfg.as_deref()) {
        None => Ok(default),
        Some(s) => s.parse::<LossKind>().map_err(Failure::config),
    }
}

fn parse_city(s: &str) -> Result<CitySize, Failure> {
    match s.to_ascii_lowercase().as_str() {
        "small" | "medium" | "small-medium" | "small_medium" => Ok(CitySize::SmallMedium),
        "large" => Ok(CitySize::Large),
        other => Err(Failure::config(format!(
            "unknown city size `{other}` (expected small-medium or large)"
        ))),
    }
}

fn load_clutter_table(
    flag: &Option<PathBuf>,
    cfg: &Option<PathBuf>,
) -> Result<Option<ClutterLossTable>, Failure> {
    match flag.as_deref().or(cfg.as_deref()) {
        None => Ok(None),
        Some(path) => Ok(Some(ClutterLossTable::load(path)?)),
    }
}

fn load_patterns_dir(dir: &Path) -> Result<Vec<Arc<crate::antenna::RadiationPattern>>, Failure> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::config(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::config(format!(
            "{}: no radiation-pattern files found",
            dir.display()
        )));
    }
    let mut patterns = Vec::with_capacity(files.len());
    for path in &files {
        patterns.push(Arc::new(load_pattern(path)?));
    }
    Ok(patterns)
}

fn load_dataset_arg(flag: &Option<PathBuf>, rc: &RunConfig) -> Result<Dataset, Failure> {
    let dir = require(
        flag.clone().or_else(|| rc.dataset_dir.clone()),
        "--dataset",
        "dataset_dir",
    )?;
    Ok(harness::load_dataset(&dir)?)
}

fn cmd_synth(args: &SynthArgs, rc: &RunConfig) -> Result<i32, Failure> {
    let maps_dir = require(
        args.maps.clone().or_else(|| rc.maps_dir.clone()),
        "--maps",
        "maps_dir",
    )?;
    let out = require(
        args.out.clone().or_else(|| rc.output_dir.clone()),
        "--out",
        "output_dir",
    )?;

    let mut cfg = SynthConfig::default();
    cfg.n_samples = args.n.or(rc.n_samples).unwrap_or(cfg.n_samples);
    cfg.patch = args.patch.or(rc.patch).unwrap_or(cfg.patch);
    cfg.seed = args.seed.or(rc.seed).unwrap_or(cfg.seed);
    cfg.field_mode = args.field_mode || rc.field_mode.unwrap_or(false);
    cfg.coverage = args.coverage.or(rc.coverage).unwrap_or(cfg.coverage);
    cfg.split = parse_split(&args.split, &rc.split, Split::Train)?;
    if let Some(table) = load_clutter_table(&args.clutter_table, &rc.clutter_table)? {
        cfg.clutter_table = table;
    }
    if let Some(dir) = args.patterns.as_deref().or(rc.patterns_dir.as_deref()) {
        cfg.patterns = load_patterns_dir(dir)?;
    }

    let maps = harness::load_maps_dir(&maps_dir)?;
    log::info!(
        "synthesizing {} samples over {} maps (seed {})",
        cfg.n_samples,
        maps.len(),
        cfg.seed
    );
    let dataset = harness::synth_dataset(&maps, &cfg)?;
    harness::save_dataset(&dataset, &out)?;
    println!(
        "samples={} maps={} split={} patch={}",
        dataset.samples.len(),
        maps.len(),
        cfg.split,
        dataset.patch
    );
    println!("wrote {}", out.join(MANIFEST_NAME).display());
    Ok(EXIT_OK)
}

fn cmd_train(args: &TrainArgs, rc: &RunConfig) -> Result<i32, Failure> {
    let dataset = load_dataset_arg(&args.dataset, rc)?;
    let out = require(
        args.out.clone().or_else(|| rc.weights.clone()),
        "--out",
        "weights",
    )?;

    let mut cfg = TrainConfig::default();
    cfg.arch.base_channels = args
        .base_channels
        .or(rc.base_channels)
        .unwrap_or(cfg.arch.base_channels);
    cfg.arch.depth = args.depth.or(rc.depth).unwrap_or(cfg.arch.depth);
    cfg.loss = parse_loss(&args.loss, &rc.loss, cfg.loss)?;
    cfg.adam.lr = args.lr.or(rc.learning_rate).unwrap_or(cfg.adam.lr);
    cfg.epochs = args.epochs.or(rc.epochs).unwrap_or(cfg.epochs);
    cfg.batch_size = args.batch_size.or(rc.batch_size).unwrap_or(cfg.batch_size);
    cfg.augment = args.augment.or(rc.augment).unwrap_or(cfg.augment);
    cfg.seed = args.seed.or(rc.seed).unwrap_or(cfg.seed);
    cfg.checkpoint_every = args.checkpoint_every.unwrap_or(0);
    if cfg.checkpoint_every > 0 {
        let dir = args
            .checkpoint_dir
            .clone()
            .unwrap_or_else(|| out.parent().unwrap_or(Path::new("")).join("checkpoints"));
        cfg.checkpoint_dir = Some(dir);
    }
    cfg.target_rmse_db = args.target_rmse_db;

    log::info!(
        "training: {} epochs, batch {}, lr {}, loss {}",
        cfg.epochs,
        cfg.batch_size,
        cfg.adam.lr,
        cfg.loss
    );
    let (weights, history) = harness::train(&dataset, &cfg)?;
    save_weights(&weights, &out)?;
    let history_path = out.with_extension("history.csv");
    harness::write_history(&history, &history_path)?;
    if let Some(last) = history.last() {
        println!(
            "epochs={} train_loss={} val_loss={} rmse_db={}",
            last.epoch, last.train_loss, last.val_loss, last.rmse_db
        );
    }
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

fn cmd_eval(args: &EvalArgs, rc: &RunConfig) -> Result<i32, Failure> {
    let dataset = load_dataset_arg(&args.dataset, rc)?;
    let weights_path = require(
        args.weights.clone().or_else(|| rc.weights.clone()),
        "--weights",
        "weights",
    )?;
    let split = parse_split(&args.split, &rc.split, Split::Test)?;
    let weights = harness::load_model(&weights_path)?;
    let n = dataset.split(split).len();
    let rmse = harness::evaluate_rmse(&weights, &dataset, split)?;
    println!("split={split} samples={n}");
    println!("rmse_db={rmse}");
    Ok(EXIT_OK)
}

fn cmd_predict(args: &PredictArgs, rc: &RunConfig) -> Result<i32, Failure> {
    let weights_path = require(
        args.weights.clone().or_else(|| rc.weights.clone()),
        "--weights",
        "weights",
    )?;
    let weights = harness::load_model(&weights_path)?;
    let tensor = read_tensor(&args.input)?;
    let x = FeatureMap::<f32>::from_input_tensor(&tensor);
    let pred = weights.forward(&x)?;
    let values: Vec<f64> = pred.data.iter().map(|&v| v as f64).collect();
    let matrix = PathLossMatrix::from_values(pred.height, pred.width, values)?;
    write_matrix(&matrix, &args.out)?;
    println!(
        "wrote {} ({}x{})",
        args.out.display(),
        matrix.height(),
        matrix.width()
    );
    Ok(EXIT_OK)
}

fn cmd_finetune(args: &FinetuneArgs, rc: &RunConfig) -> Result<i32, Failure> {
    let dataset = load_dataset_arg(&args.dataset, rc)?;
    let weights_path = require(
        args.weights.clone().or_else(|| rc.weights.clone()),
        "--weights",
        "weights",
    )?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| weights_path.with_extension("finetuned.plw"));

    let mut cfg = FinetuneConfig::default();
    cfg.split = parse_split(&args.split, &rc.split, cfg.split)?;
    cfg.loss = parse_loss(&args.loss, &rc.loss, cfg.loss)?;
    cfg.adam.lr = args.lr.or(rc.learning_rate).unwrap_or(cfg.adam.lr);
    cfg.epochs = args.epochs.or(rc.epochs).unwrap_or(cfg.epochs);
    cfg.batch_size = args.batch_size.or(rc.batch_size).unwrap_or(cfg.batch_size);
    cfg.augment = args.augment.or(rc.augment).unwrap_or(cfg.augment);
    cfg.seed = args.seed.or(rc.seed).unwrap_or(cfg.seed);

    let base = harness::load_model(&weights_path)?;
    let (tuned, history) = harness::finetune(&base, &dataset, &cfg)?;
    save_weights(&tuned, &out)?;
    if !history.is_empty() {
        harness::write_history(&history, &out.with_extension("history.csv"))?;
    }
    if let Some(last) = history.last() {
        println!("epochs={} rmse_db={}", last.epoch, last.rmse_db);
    }
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

fn cmd_baseline(args: &BaselineArgs, rc: &RunConfig) -> Result<i32, Failure> {
    let kind = args
        .model
        .parse::<BaselineKind>()
        .map_err(Failure::config)?;
    if args.calibrate_on.is_some() && kind != BaselineKind::Spm {
        return Err(Failure::config(
            "--calibrate-on only applies to the spm baseline",
        ));
    }
    let dataset = load_dataset_arg(&args.dataset, rc)?;
    let split = parse_split(&args.split, &rc.split, Split::Test)?;

    let mut cfg = BaselineConfig::new(kind);
    if let Some(city) = &args.city {
        cfg.city = parse_city(city)?;
    }
    if let Some(table) = load_clutter_table(&args.clutter_table, &rc.clutter_table)? {
        cfg.clutter_table = table;
    }

    let maps = match args.maps.as_deref().or(rc.maps_dir.as_deref()) {
        Some(dir) => Some(harness::load_maps_dir(dir)?),
        None => None,
    };
    let maps_ref = maps.as_deref();

    if let Some(calib) = &args.calibrate_on {
        let calib_split = calib.parse::<Split>().map_err(Failure::config)?;
        let measurements = harness::measurements_from_split(&dataset, calib_split, maps_ref)?;
        let fit = calibrate_spm(&measurements)?;
        cfg.spm = fit.params;
        println!(
            "calibrated on {} ({} measurements, residual_rms_db={})",
            calib_split,
            measurements.len(),
            fit.residual_rms_db
        );
    }

    if let Some(dir) = &args.write_matrices {
        fs::create_dir_all(dir).map_err(|e| Failure::config(format!("{}: {e}", dir.display())))?;
        for sample in dataset.split(split) {
            let pred = harness::baseline_prediction(sample, &cfg, dataset.resolution_m, maps_ref)?;
            write_matrix(&pred, &dir.join(format!("{}.plm", sample.meta.id)))?;
        }
        println!("wrote matrices to {}", dir.display());
    }

    let n = dataset.split(split).len();
    let rmse = harness::baseline_rmse(&dataset, split, &cfg, maps_ref)?;
    println!("model={kind:?} split={split} samples={n}");
    println!("rmse_db={rmse}");
    Ok(EXIT_OK)
}

/// Fixed 8-stop palette, ordered by increasing luminance so higher path loss
/// always renders brighter.
const PALETTE: [[u8; 3]; 8] = [
    [0, 0, 80],
    [20, 20, 160],
    [0, 90, 200],
    [0, 160, 160],
    [40, 200, 80],
    [160, 220, 40],
    [255, 200, 60],
    [255, 255, 255],
];

fn unit_scale(value: f64, min_db: f64, max_db: f64) -> f64 {
    ((value - min_db) / (max_db - min_db)).clamp(0.0, 1.0)
}

fn gray_bytes(matrix: &PathLossMatrix, min_db: f64, max_db: f64) -> Vec<u8> {
    matrix
        .values()
        .iter()
        .zip(matrix.mask())
        .map(|(&v, &valid)| {
            if valid {
                (unit_scale(v, min_db, max_db) * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

fn palette_bytes(matrix: &PathLossMatrix, min_db: f64, max_db: f64) -> Vec<u8> {
    let mut rgb = Vec::with_capacity(matrix.values().len() * 3);
    for (&v, &valid) in matrix.values().iter().zip(matrix.mask()) {
        let color = if valid {
            let stop = ((unit_scale(v, min_db, max_db) * 8.0) as usize).min(7);
            PALETTE[stop]
        } else {
            [0, 0, 0]
        };
        rgb.extend_from_slice(&color);
    }
    rgb
}

fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<(), Failure> {
    let mut file =
        fs::File::create(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    file.write_all(format!("P6\n{width} {height}\n255\n").as_bytes())
        .and_then(|_| file.write_all(rgb))
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn cmd_render(args: &RenderArgs, rc: &RunConfig) -> Result<i32, Failure> {
    match (&args.matrix, &args.filters) {
        (Some(_), Some(_)) => Err(Failure::config(
            "--matrix and --filters are mutually exclusive",
        )),
        (Some(matrix_path), None) => {
            if !(args.max_db > args.min_db) {
                return Err(Failure::config(format!(
                    "--max-db ({}) must exceed --min-db ({})",
                    args.max_db, args.min_db
                )));
            }
            let out = require(
                args.out.clone().or_else(|| rc.output_dir.clone()),
                "--out",
                "output_dir",
            )?;
            let matrix = read_matrix(matrix_path)?;
            let (h, w) = (matrix.height(), matrix.width());
            match out.extension().and_then(|e| e.to_str()) {
                Some("pgm") => {
                    let bytes = gray_bytes(&matrix, args.min_db, args.max_db);
                    harness::write_pgm(&out, w, h, &bytes)?;
                }
                Some("ppm") => {
                    let bytes = palette_bytes(&matrix, args.min_db, args.max_db);
                    write_ppm(&out, w, h, &bytes)?;
                }
                _ => {
                    return Err(Failure::config(format!(
                        "{}: output extension must be .pgm or .ppm",
                        out.display()
                    )))
                }
            }
            println!("wrote {} ({}x{})", out.display(), h, w);
            Ok(EXIT_OK)
        }
        (None, Some(weights_path)) => {
            let dir = require(
                args.out_dir.clone().or_else(|| rc.output_dir.clone()),
                "--out-dir",
                "output_dir",
            )?;
            let weights = harness::load_model(weights_path)?;
            let filters = harness::export_first_layer_filters(&weights);
            let files = harness::save_filter_pgms(&filters, &dir, args.scale)?;
            println!("wrote {} filter images to {}", files.len(), dir.display());
            Ok(EXIT_OK)
        }
        (None, None) => Err(Failure::config(
            "pass --matrix <file> or --filters <weights>",
        )),
    }
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<i32, Failure> {
    let mut cfg = GradCheckConfig::default();
    cfg.arch.depth = args.depth;
    cfg.arch.base_channels = args.base_channels;
    cfg.height = args.height;
    cfg.width = args.width;
    cfg.loss = args.loss.parse::<LossKind>().map_err(Failure::config)?;
    cfg.seed = args.seed;
    cfg.num_params = args.num_params;
    cfg.step = args.step;
    let tol = args.tol.unwrap_or(match cfg.loss {
        LossKind::Mse => 1e-5,
        LossKind::Mae => 1e-4,
    });

    let report = grad_check(&cfg)?;
    println!(
        "loss={} checked={} loss_value={} max_rel_error={:e} mean_rel_error={:e}",
        report.loss, report.checked, report.loss_value, report.max_rel_error, report.mean_rel_error
    );
    if report.max_rel_error <= tol {
        println!("gradcheck PASS (tol={tol:e})");
        Ok(EXIT_OK)
    } else {
        println!("gradcheck FAIL (tol={tol:e})");
        Ok(EXIT_TOLERANCE)
    }
}
