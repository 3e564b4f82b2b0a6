//! Command-line entry point tying the pipeline together: dataset generation,
//! training, single-frame inference, clinical evaluation, and the ablation
//! suite.
//!
//! Conventions shared by every subcommand:
//! - exit code 0 on success, 1 on runtime failure (missing files, numerical
//!   aborts), 2 on usage errors (bad flags, invalid configuration);
//! - the `GEOUNET_DATA_DIR` environment variable supplies a default dataset
//!   root wherever `--data` (or generate's `--out`) is omitted;
//! - all artifacts land under the command's `--out` directory next to a
//!   `run_manifest.json` recording the resolved settings, so a finished
//!   directory is self-describing;
//! - given fixed flags and seeds every command produces identical result
//!   artifacts (the training log's wall-clock field is the one exception).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::Serialize;
use serde_json::json;

use crate::geometry::{load_frame_png, save_mask_png, CartesianFrame, CartesianMask};
use crate::inference::{discontinuity_score, infer, InferMode};
use crate::metrics::{clinical_report, diameter_report, per_frame_csv, DiameterReport};
use crate::model::{checkpoint_dtype, load_checkpoint, Model, ModelConfig};
use crate::phantom::{make_dataset, Dataset, Sample, Split};
use crate::scalar::Scalar;
use crate::training::{run_ablation_suite, train, TrainConfig, Variant};
use crate::Error;

/// Environment variable consulted when `--data` / generate's `--out` is absent.
pub const DATA_DIR_ENV: &str = "GEOUNET_DATA_DIR";

/// Parses `std::env::args` and runs the selected subcommand, translating the
/// outcome into a process exit code. This is the whole body of `main`.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests arrive as "errors" but exit cleanly.
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match cli.command.dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

/// Failures split by who is at fault: `Usage` means the invocation itself is
/// wrong (exit 2), `Runtime` means the work could not be completed (exit 1).
#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

type CliResult<T> = Result<T, CliError>;

/// Funnels library and I/O errors into the runtime (exit 1) bucket.
trait Rt<T> {
    fn rt(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Rt<T> for Result<T, E> {
    fn rt(self) -> CliResult<T> {
        self.map_err(|e| CliError::Runtime(e.into()))
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser)]
#[command(
    name = "geounet",
    version,
    about = "Polar-domain lumen segmentation: phantom datasets, training, inference, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a phantom dataset with train/val/test splits.
    Generate(GenerateArgs),
    /// Train a model and write checkpoints plus a JSONL step log.
    Train(TrainArgs),
    /// Segment a single frame with a trained checkpoint.
    Infer(InferArgs),
    /// Evaluate a checkpoint over a dataset split and emit the clinical table.
    Eval(EvalArgs),
    /// Train and evaluate every model variant, emitting the comparison table.
    Ablate(AblateArgs),
}

impl Command {
    fn dispatch(self) -> CliResult<()> {
        match self {
            Command::Generate(args) => cmd_generate(args),
            Command::Train(args) => cmd_train(args),
            Command::Infer(args) => cmd_infer(args),
            Command::Eval(args) => cmd_eval(args),
            Command::Ablate(args) => cmd_ablate(args),
        }
    }
}

/// Numeric precision of model parameters and activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

/// Dataset split selector for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Resolves a dataset directory from a flag, falling back to the environment.
fn data_dir(flag: Option<PathBuf>, flag_name: &str) -> CliResult<PathBuf> {
    if let Some(dir) = flag {
        return Ok(dir);
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => Ok(PathBuf::from(dir)),
        None => Err(usage(format!(
            "no dataset directory: pass {flag_name} or set {DATA_DIR_ENV}"
        ))),
    }
}

/// Writes `run_manifest.json` under `out`: the command name, the settings it
/// resolved to after merging flags, and the artifacts it produced (paths
/// relative to `out`). Contains nothing time-dependent, so reruns with the
/// same flags byte-match.
fn write_run_manifest(
    out: &Path,
    command: &str,
    settings: serde_json::Value,
    outputs: &[&str],
) -> CliResult<()> {
    let manifest = json!({
        "command": command,
        "settings": settings,
        "outputs": outputs,
    });
    let path = out.join("run_manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).rt()? + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .rt()
}

fn settings_json(value: impl Serialize) -> CliResult<serde_json::Value> {
    serde_json::to_value(value).rt()
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct GenerateArgs {
    /// Training frames to synthesize.
    #[arg(long, default_value_t = 200)]
    n_train: usize,
    /// Validation frames to synthesize.
    #[arg(long, default_value_t = 50)]
    n_val: usize,
    /// Held-out test frames to synthesize.
    #[arg(long, default_value_t = 50)]
    n_test: usize,
    /// Fraction of compressed (N2) anatomy per split, in [0, 1].
    #[arg(long, default_value_t = 0.3)]
    n2_fraction: f64,
    /// RNG seed; same seed and sizes reproduce the dataset bit for bit.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cartesian frame side length in pixels.
    #[arg(long, default_value_t = 256)]
    frame_px: usize,
    /// Dataset directory to create (defaults to $GEOUNET_DATA_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_generate(args: GenerateArgs) -> CliResult<()> {
    if !(0.0..=1.0).contains(&args.n2_fraction) {
        return Err(usage(format!(
            "--n2-fraction must lie in [0, 1], got {}",
            args.n2_fraction
        )));
    }
    if args.n_train == 0 || args.n_val == 0 || args.n_test == 0 {
        return Err(usage("--n-train, --n-val, and --n-test must be positive"));
    }
    let out = data_dir(args.out, "--out")?;
    let manifest = make_dataset(
        args.n_train,
        args.n_val,
        args.n_test,
        args.n2_fraction,
        args.seed,
        args.frame_px,
        &out,
    )
    .rt()?;
    write_run_manifest(
        &out,
        "generate",
        json!({
            "n_train": args.n_train,
            "n_val": args.n_val,
            "n_test": args.n_test,
            "n2_fraction": args.n2_fraction,
            "seed": args.seed,
            "frame_px": args.frame_px,
        }),
        &["manifest.json", "images", "masks"],
    )?;
    println!(
        "wrote {} frames ({} train / {} val / {} test) to {}",
        manifest.entries.len(),
        args.n_train,
        args.n_val,
        args.n_test,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args)]
struct TrainArgs {
    /// JSON training config; omitted fields take the documented defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root (defaults to $GEOUNET_DATA_DIR).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for checkpoints, the step log, and the run manifest.
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
    /// Model variant; rewrites the config's branch/activation/representation
    /// flags when given.
    #[arg(long)]
    variant: Option<Variant>,
    /// Parameter precision.
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    /// Override: optimizer updates to run.
    #[arg(long)]
    iters: Option<usize>,
    /// Override: frames per forward/backward pass.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Override: batches accumulated per optimizer update.
    #[arg(long)]
    grad_accum: Option<usize>,
    /// Override: initial learning rate.
    #[arg(long)]
    lr_start: Option<f64>,
    /// Override: final learning rate.
    #[arg(long)]
    lr_end: Option<f64>,
    /// Override: training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override: iterations between validation passes.
    #[arg(long)]
    val_every: Option<usize>,
    /// Override: polar angle/radius resolution (grid side for cartesian models).
    #[arg(long)]
    r: Option<usize>,
    /// Override: UNet encoder depth.
    #[arg(long)]
    depth: Option<usize>,
    /// Override: channels after the first encoder block.
    #[arg(long)]
    base_channels: Option<usize>,
    /// Disable data augmentation regardless of the config.
    #[arg(long)]
    no_augment: bool,
}

/// Loads the JSON config (or defaults) and applies flag overrides on top;
/// flags always win. `--variant` is applied before the architecture
/// overrides so `--variant contour-only --depth 3` means a depth-3
/// contour-only model.
fn merge_train_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .rt()?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))
                .rt()?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.variant {
        cfg.model = v.apply(cfg.model);
    }
    if let Some(v) = args.iters {
        cfg.total_iters = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.grad_accum {
        cfg.grad_accum_steps = v;
    }
    if let Some(v) = args.lr_start {
        cfg.lr_start = v;
    }
    if let Some(v) = args.lr_end {
        cfg.lr_end = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.val_every {
        cfg.val_every = v;
    }
    if let Some(v) = args.r {
        cfg.model.r = v;
    }
    if let Some(v) = args.depth {
        cfg.model.depth = v;
    }
    if let Some(v) = args.base_channels {
        cfg.model.base_channels = v;
    }
    if args.no_augment {
        cfg.augment.enabled = false;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let cfg = merge_train_config(&args)?;
    let data = data_dir(args.data.clone(), "--data")?;
    let dataset = Dataset::open(&data)
        .with_context(|| format!("opening dataset {}", data.display()))
        .rt()?;
    fs::create_dir_all(&args.out).rt()?;
    let outcome = match args.precision {
        Precision::F32 => train::<f32>(&cfg, &dataset, &args.out),
        Precision::F64 => train::<f64>(&cfg, &dataset, &args.out),
    }
    .rt()?;
    write_run_manifest(
        &args.out,
        "train",
        json!({
            "config": settings_json(&cfg)?,
            "precision": format!("{:?}", args.precision).to_lowercase(),
            "data": data,
            "outcome": settings_json(&outcome)?,
        }),
        &["best.ckpt", "final.ckpt", "train_log.jsonl"],
    )?;
    println!(
        "trained {} parameters for {} iters; best val metric {:.6} -> {}",
        outcome.param_count,
        cfg.total_iters,
        outcome.best_val_metric,
        outcome.best_checkpoint.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

#[derive(Args)]
struct InferArgs {
    /// Trained checkpoint to load; precision is read from its header.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input frame PNG (16-bit grayscale with JSON sidecar).
    #[arg(long)]
    image: PathBuf,
    /// Inference strategy.
    #[arg(long, default_value_t = InferMode::Plain)]
    mode: InferMode,
    /// Output directory for the mask, contour, and run manifest.
    #[arg(long, default_value = "runs/infer")]
    out: PathBuf,
}

fn cmd_infer(args: InferArgs) -> CliResult<()> {
    match checkpoint_dtype(&args.checkpoint).rt()?.as_str() {
        "f32" => infer_typed::<f32>(&args),
        "f64" => infer_typed::<f64>(&args),
        other => Err(CliError::Runtime(anyhow::anyhow!(
            "checkpoint dtype {other:?} is not supported"
        ))),
    }
}

fn infer_typed<S: Scalar>(args: &InferArgs) -> CliResult<()> {
    let model: Model<S> = load_checkpoint(&args.checkpoint).rt()?;
    let frame: CartesianFrame<S> = load_frame_png(&args.image)
        .with_context(|| format!("loading frame {}", args.image.display()))
        .rt()?;
    let (mask, contour) = infer(&model, &frame, args.mode).rt()?;
    let score = discontinuity_score(&contour).to_f64();

    fs::create_dir_all(&args.out).rt()?;
    save_mask_png(&args.out.join("mask.png"), &mask).rt()?;
    let depths: Vec<f64> = contour.depth.iter().map(|&v| v.to_f64()).collect();
    let contour_json = json!({
        "r": depths.len(),
        "depth_px": depths,
        "discontinuity_score": score,
    });
    fs::write(
        args.out.join("contour.json"),
        serde_json::to_string_pretty(&contour_json).rt()? + "\n",
    )
    .rt()?;
    write_run_manifest(
        &args.out,
        "infer",
        json!({
            "checkpoint": args.checkpoint,
            "image": args.image,
            "mode": args.mode.to_string(),
            "dtype": S::DTYPE,
        }),
        &["mask.png", "contour.json"],
    )?;
    println!("discontinuity score: {score:.6}");
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EvalArgs {
    /// Trained checkpoint to evaluate; precision is read from its header.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Training config to cross-check against the checkpoint's recorded
    /// model architecture; a mismatch aborts.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root (defaults to $GEOUNET_DATA_DIR).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Split to evaluate.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Inference strategy; plusplus runs on plain-trained weights as-is.
    #[arg(long, default_value_t = InferMode::Plain)]
    mode: InferMode,
    /// Output directory for the clinical table, per-frame CSV, and overlays.
    #[arg(long, default_value = "runs/eval")]
    out: PathBuf,
    /// Also write per-frame overlay PNGs (green = predicted, blue = truth).
    #[arg(long)]
    render: bool,
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    match checkpoint_dtype(&args.checkpoint).rt()?.as_str() {
        "f32" => eval_typed::<f32>(&args),
        "f64" => eval_typed::<f64>(&args),
        other => Err(CliError::Runtime(anyhow::anyhow!(
            "checkpoint dtype {other:?} is not supported"
        ))),
    }
}

/// Fails when a `--config` file disagrees with the architecture stored in the
/// checkpoint: evaluating weights under a different architecture than they
/// were trained with is never meaningful.
fn check_config_matches(config: &Path, model_cfg: &ModelConfig) -> CliResult<()> {
    let text = fs::read_to_string(config)
        .with_context(|| format!("reading config {}", config.display()))
        .rt()?;
    let cfg: TrainConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", config.display()))
        .rt()?;
    let want = serde_json::to_value(&cfg.model).rt()?;
    let got = serde_json::to_value(model_cfg).rt()?;
    if want != got {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "checkpoint/config mismatch: {} specifies model {want}, checkpoint holds {got}",
            config.display()
        )));
    }
    Ok(())
}

fn eval_typed<S: Scalar>(args: &EvalArgs) -> CliResult<()> {
    let model: Model<S> = load_checkpoint(&args.checkpoint).rt()?;
    if let Some(config) = &args.config {
        check_config_matches(config, &model.cfg)?;
    }
    let data = data_dir(args.data.clone(), "--data")?;
    let dataset = Dataset::open(&data)
        .with_context(|| format!("opening dataset {}", data.display()))
        .rt()?;
    let split: Split = args.split.into();
    let entries = dataset.split_entries(split);
    if entries.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "dataset {} has no {split} split",
            data.display()
        )));
    }

    let mut samples: Vec<Sample> = Vec::with_capacity(entries.len());
    for entry in &entries {
        samples.push(dataset.load(entry).rt()?);
    }
    let mm_per_pixel = samples[0].frame.mm_per_pixel;

    fs::create_dir_all(&args.out).rt()?;
    let overlays = args.out.join("overlays");
    if args.render {
        fs::create_dir_all(&overlays).rt()?;
    }

    let mut masks: Vec<CartesianMask> = Vec::with_capacity(samples.len());
    let mut per_frame: Vec<(String, DiameterReport)> = Vec::with_capacity(samples.len());
    let mut score_sum = 0.0;
    for sample in &samples {
        let frame = CartesianFrame::new(
            sample.frame.pixels.mapv(S::from_f64),
            sample.frame.mm_per_pixel,
            sample.frame.center,
        )
        .rt()?;
        let (mask, contour) = infer(&model, &frame, args.mode).rt()?;
        score_sum += discontinuity_score(&contour).to_f64();
        let report = match diameter_report(&mask, &sample.mask, sample.label, mm_per_pixel) {
            Ok(report) => report,
            // An empty prediction has no diameters; report infinite error so
            // the frame counts against every threshold instead of vanishing.
            Err(Error::EmptyMask) => DiameterReport {
                major_mm: 0.0,
                minor_mm: 0.0,
                major_err_mm: f64::INFINITY,
                minor_err_mm: f64::INFINITY,
                label: sample.label,
            },
            Err(e) => return Err(e).rt(),
        };
        if args.render {
            render_overlay(
                &overlays.join(format!("{}.png", sample.id)),
                &sample.frame,
                &mask,
                &sample.mask,
            )?;
        }
        per_frame.push((sample.id.clone(), report));
        masks.push(mask);
    }
    let mean_score = score_sum / samples.len() as f64;

    let pairs: Vec<(&CartesianMask, &CartesianMask, crate::phantom::Label)> = masks
        .iter()
        .zip(&samples)
        .map(|(mask, sample)| (mask, &sample.mask, sample.label))
        .collect();
    let table = clinical_report(&pairs, mm_per_pixel).rt()?;

    let clinical_csv = table.to_csv();
    fs::write(args.out.join("clinical.csv"), &clinical_csv).rt()?;
    fs::write(
        args.out.join("clinical.json"),
        serde_json::to_string_pretty(&table).rt()? + "\n",
    )
    .rt()?;
    fs::write(args.out.join("per_frame.csv"), per_frame_csv(&per_frame)).rt()?;

    let mut outputs = vec!["clinical.csv", "clinical.json", "per_frame.csv"];
    if args.render {
        outputs.push("overlays");
    }
    write_run_manifest(
        &args.out,
        "eval",
        json!({
            "checkpoint": args.checkpoint,
            "data": data,
            "split": split.to_string(),
            "mode": args.mode.to_string(),
            "n_frames": samples.len(),
            "mean_discontinuity_score": mean_score,
            // Dice here is computed in the Cartesian (clinical) frame.
            "dice_space": "cartesian",
        }),
        &outputs,
    )?;
    print!("{clinical_csv}");
    println!("mean discontinuity score ({}): {mean_score:.6}", args.mode);
    println!(
        "targets met: N1 {} N2 {}",
        table.n1.targets_met, table.n2.targets_met
    );
    Ok(())
}

/// Foreground pixels with at least one 4-neighbour outside the mask (frame
/// borders count as outside), i.e. a one-pixel contour band.
fn boundary_pixels(grid: &Array2<u8>) -> Vec<(usize, usize)> {
    let (rows, cols) = grid.dim();
    let mut out = Vec::new();
    for ((i, j), &v) in grid.indexed_iter() {
        if v == 0 {
            continue;
        }
        let edge = i == 0 || j == 0 || i == rows - 1 || j == cols - 1;
        if edge
            || grid[[i - 1, j]] == 0
            || grid[[i + 1, j]] == 0
            || grid[[i, j - 1]] == 0
            || grid[[i, j + 1]] == 0
        {
            out.push((i, j));
        }
    }
    out
}

/// Writes the frame in grayscale with the truth contour in blue and the
/// predicted contour in green drawn on top (prediction last, so it stays
/// visible where the two agree).
fn render_overlay(
    path: &Path,
    frame: &CartesianFrame<f64>,
    pred: &CartesianMask,
    truth: &CartesianMask,
) -> CliResult<()> {
    let side = frame.side();
    let mut img = image::RgbImage::new(side as u32, side as u32);
    for ((i, j), &v) in frame.pixels.indexed_iter() {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        img.put_pixel(j as u32, i as u32, image::Rgb([g, g, g]));
    }
    for (i, j) in boundary_pixels(&truth.pixels) {
        img.put_pixel(j as u32, i as u32, image::Rgb([40, 90, 255]));
    }
    for (i, j) in boundary_pixels(&pred.pixels) {
        img.put_pixel(j as u32, i as u32, image::Rgb([0, 220, 60]));
    }
    img.save(path)
        .with_context(|| format!("writing overlay {}", path.display()))
        .rt()
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct AblateArgs {
    /// JSON training config shared by all variants; omitted fields take the
    /// documented defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root (defaults to $GEOUNET_DATA_DIR).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory; each variant trains into a subdirectory.
    #[arg(long, default_value = "runs/ablation")]
    out: PathBuf,
    /// Parameter precision.
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    /// Override: optimizer updates to run per variant.
    #[arg(long)]
    iters: Option<usize>,
    /// Override: polar angle/radius resolution.
    #[arg(long)]
    r: Option<usize>,
    /// Override: UNet encoder depth.
    #[arg(long)]
    depth: Option<usize>,
    /// Override: channels after the first encoder block.
    #[arg(long)]
    base_channels: Option<usize>,
    /// Override: training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Disable data augmentation regardless of the config.
    #[arg(long)]
    no_augment: bool,
}

fn cmd_ablate(args: AblateArgs) -> CliResult<()> {
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .rt()?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))
                .rt()?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.iters {
        cfg.total_iters = v;
    }
    if let Some(v) = args.r {
        cfg.model.r = v;
    }
    if let Some(v) = args.depth {
        cfg.model.depth = v;
    }
    if let Some(v) = args.base_channels {
        cfg.model.base_channels = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if args.no_augment {
        cfg.augment.enabled = false;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let data = data_dir(args.data.clone(), "--data")?;
    let dataset = Dataset::open(&data)
        .with_context(|| format!("opening dataset {}", data.display()))
        .rt()?;
    fs::create_dir_all(&args.out).rt()?;
    let report = match args.precision {
        Precision::F32 => run_ablation_suite::<f32>(&cfg, &dataset, &args.out),
        Precision::F64 => run_ablation_suite::<f64>(&cfg, &dataset, &args.out),
    }
    .rt()?;

    let csv = report.to_csv();
    fs::write(args.out.join("ablation.csv"), &csv).rt()?;
    fs::write(
        args.out.join("ablation.json"),
        serde_json::to_string_pretty(&report).rt()? + "\n",
    )
    .rt()?;
    write_run_manifest(
        &args.out,
        "ablate",
        json!({
            "config": settings_json(&cfg)?,
            "precision": format!("{:?}", args.precision).to_lowercase(),
            "data": data,
            "variants": Variant::ALL.iter().map(|v| v.as_str()).collect::<Vec<_>>(),
        }),
        &["ablation.csv", "ablation.json"],
    )?;
    print!("{csv}");
    Ok(())
}
