//! Training loop: Adam with a linear learning-rate ramp, gradient
//! accumulation with loss-mean reduction, best-checkpoint retention, a JSON
//! Lines step log, and the five-variant ablation suite.

mod augment;

pub use augment::{augment, star_convexity, AugmentConfig};

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, ArrayD};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    cartesian_mask_to_polar, cartesian_to_polar, label_components, mask_to_contour_depth,
    resize_frame, resize_mask, CartesianFrame, CartesianMask, Interp, PolarGeom, PolarMask,
};
use crate::inference::{infer, InferMode};
use crate::losses::{huber, soft_dice, unified_loss_grad, LossBreakdown, LossWeights};
use crate::metrics::{clinical_report, ClinicalTable};
use crate::model::{
    build_model, load_checkpoint, save_checkpoint, Gradients, Model, ModelConfig, Representation,
};
use crate::phantom::{Dataset, Label, Sample, Split};
use crate::scalar::Scalar;

/// Full training configuration; serializable as the CLI config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_grad_accum")]
    pub grad_accum_steps: usize,
    #[serde(default = "default_lr_start")]
    pub lr_start: f64,
    #[serde(default = "default_lr_end")]
    pub lr_end: f64,
    /// Optimizer updates; the published regime runs 50,000, the desk-scale
    /// default 2,000.
    #[serde(default = "default_total_iters")]
    pub total_iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_val_every")]
    pub val_every: usize,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossWeights,
}

fn default_batch_size() -> usize {
    3
}
fn default_grad_accum() -> usize {
    16
}
fn default_lr_start() -> f64 {
    1e-4
}
fn default_lr_end() -> f64 {
    1e-7
}
fn default_total_iters() -> usize {
    2000
}
fn default_val_every() -> usize {
    200
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch_size(),
            grad_accum_steps: default_grad_accum(),
            lr_start: default_lr_start(),
            lr_end: default_lr_end(),
            total_iters: default_total_iters(),
            seed: 0,
            val_every: default_val_every(),
            augment: AugmentConfig::default(),
            model: ModelConfig::default(),
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_start >= self.lr_end && self.lr_end > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must satisfy lr_start >= lr_end > 0, got {} -> {}",
                self.lr_start, self.lr_end
            )));
        }
        if self.total_iters == 0 {
            return Err(Error::InvalidConfig("total_iters must be positive".into()));
        }
        if self.batch_size == 0 || self.grad_accum_steps == 0 {
            return Err(Error::InvalidConfig(
                "batch_size and grad_accum_steps must be positive".into(),
            ));
        }
        if self.val_every == 0 {
            return Err(Error::InvalidConfig("val_every must be positive".into()));
        }
        self.augment.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        Ok(())
    }
}

/// Linear ramp from `lr_start` at iteration 0 to `lr_end` at `total_iters`.
pub fn lr_schedule(iter: usize, cfg: &TrainConfig) -> Result<f64> {
    if iter > cfg.total_iters {
        return Err(Error::InvalidConfig(format!(
            "iteration {iter} beyond schedule end {}",
            cfg.total_iters
        )));
    }
    let frac = iter as f64 / cfg.total_iters as f64;
    Ok(cfg.lr_start + (cfg.lr_end - cfg.lr_start) * frac)
}

/// Adam with the framework-default moment settings; only the learning rate
/// is scheduled externally.
pub struct Adam<S> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u32,
    m: HashMap<String, ArrayD<S>>,
    v: HashMap<String, ArrayD<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// One bias-corrected update over every parameter with a gradient.
    pub fn step(&mut self, model: &mut Model<S>, grads: &Gradients<S>, lr: f64) {
        self.t += 1;
        let b1 = S::from_f64(self.beta1);
        let b2 = S::from_f64(self.beta2);
        let one = S::one();
        let bc1 = S::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = S::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr_s = S::from_f64(lr);
        let eps = S::from_f64(self.eps);
        let (m_state, v_state) = (&mut self.m, &mut self.v);
        model.visit_mut(&mut |name, mut param| {
            let Some(g) = grads.get(&name) else {
                return;
            };
            let m = m_state
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = v_state
                .entry(name)
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            ndarray::Zip::from(&mut param)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p = *p - lr_s * m_hat / (v_hat.sqrt() + eps);
                });
        });
    }
}

impl<S: Scalar> Default for Adam<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// One JSONL line per optimizer update. Absent loss terms are omitted so the
/// log shows exactly which losses a variant trains with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub iter: usize,
    pub lr: f64,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ce: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub huber: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dense: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hausdorff: Option<f64>,
    pub wall_ms: f64,
    /// Validation metric when this step validated (lower is better:
    /// per-angle Huber for contour-bearing models, soft-Dice loss for
    /// pixel-only ones).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_metric: Option<f64>,
}

/// Where a finished run left its artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub best_checkpoint: PathBuf,
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub best_val_metric: f64,
    pub final_val_metric: f64,
    pub param_count: usize,
}

/// A sample converted to the model's input space: the raw grid the network
/// consumes plus the matching grid-shaped target mask.
struct Prepared<S> {
    grid: Array2<S>,
    target: PolarMask,
}

fn frame_to_scalar<S: Scalar>(frame: &CartesianFrame<f64>) -> Result<CartesianFrame<S>> {
    CartesianFrame::new(
        frame.pixels.mapv(|v| S::from_f64(v)),
        frame.mm_per_pixel,
        frame.center,
    )
}

fn prepare<S: Scalar>(sample: &Sample, cfg: &ModelConfig) -> Result<Prepared<S>> {
    let frame = frame_to_scalar::<S>(&sample.frame)?;
    match cfg.representation {
        Representation::Polar => Ok(Prepared {
            grid: cartesian_to_polar(&frame, cfg.r, Interp::Bilinear)?.pixels,
            target: cartesian_mask_to_polar(&sample.mask, cfg.r)?,
        }),
        Representation::Cartesian => {
            let resized = resize_frame(&frame, cfg.r)?;
            let mask = resize_mask(&sample.mask, cfg.r)?;
            // The mask rides in a PolarMask only as a grid container so the
            // dense losses apply unchanged; the geometry is the frame's own.
            let geom = PolarGeom {
                rows_per_turn: cfg.r,
                r_max_px: cfg.r as f64 / 2.0,
                theta0: 0.0,
                center: resized.center,
                mm_per_pixel: resized.mm_per_pixel,
            };
            Ok(Prepared {
                grid: resized.pixels,
                target: PolarMask::new(mask.pixels, geom)?,
            })
        }
    }
}

/// Mean validation metric, lower better: per-angle Huber against the
/// ground-truth depth for contour-bearing models, soft-Dice loss for
/// pixel-only baselines.
fn validation_metric<S: Scalar>(model: &Model<S>, prepared: &[Prepared<S>]) -> Result<f64> {
    let mut acc = 0.0;
    for p in prepared {
        let (out, _) = model.forward_grid(&p.grid)?;
        acc += if let Some(s_c) = &out.s_c {
            let y_c = mask_to_contour_depth(&p.target);
            huber(s_c, &y_c)?.to_f64() / p.target.pixels.nrows() as f64
        } else {
            let pix = out
                .s_pix
                .as_ref()
                .or(out.p_pix.as_ref())
                .ok_or(Error::MissingBranch("any head"))?;
            soft_dice(pix, &p.target)?.to_f64()
        };
    }
    Ok(acc / prepared.len() as f64)
}

#[derive(Default)]
struct LossSums {
    n: usize,
    total: f64,
    ce: Option<f64>,
    huber: Option<f64>,
    dense: Option<f64>,
    dice: Option<f64>,
    hausdorff: Option<f64>,
}

impl LossSums {
    fn add<S: Scalar>(&mut self, bd: &LossBreakdown<S>) {
        fn acc<S: Scalar>(slot: &mut Option<f64>, v: Option<S>) {
            if let Some(v) = v {
                *slot = Some(slot.unwrap_or(0.0) + v.to_f64());
            }
        }
        self.n += 1;
        self.total += bd.total.to_f64();
        acc(&mut self.ce, bd.ce);
        acc(&mut self.huber, bd.huber);
        acc(&mut self.dense, bd.dense);
        acc(&mut self.dice, bd.dice);
        acc(&mut self.hausdorff, bd.hausdorff);
    }

    fn mean(&self) -> (f64, [Option<f64>; 5]) {
        let n = self.n.max(1) as f64;
        let d = |v: Option<f64>| v.map(|v| v / n);
        (
            self.total / n,
            [
                d(self.ce),
                d(self.huber),
                d(self.dense),
                d(self.dice),
                d(self.hausdorff),
            ],
        )
    }
}

/// Deterministic per-sample augmentation stream, independent of worker
/// count: seeded from the run seed, the sample id, and the epoch.
fn sample_rng(seed: u64, id: &str, epoch: usize) -> ChaCha8Rng {
    let mut h = DefaultHasher::new();
    (seed, id, epoch).hash(&mut h);
    ChaCha8Rng::seed_from_u64(h.finish())
}

/// Runs the full optimization: `total_iters` updates, each accumulating
/// `grad_accum_steps` micro-batches of `batch_size` under loss-mean
/// reduction. Validates every `val_every` updates (and at the end), keeping
/// the best checkpoint; `final.ckpt`, `best.ckpt`, and `train_log.jsonl`
/// land in `out_dir`. A non-finite loss aborts with the offending batch ids.
pub fn train<S: Scalar>(cfg: &TrainConfig, dataset: &Dataset, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let train_entries = dataset.split_entries(Split::Train);
    let val_entries = dataset.split_entries(Split::Val);
    if train_entries.is_empty() {
        return Err(Error::Dataset("manifest has no training split".into()));
    }
    if val_entries.is_empty() {
        return Err(Error::Dataset("manifest has no validation split".into()));
    }
    let train_samples: Vec<Sample> = train_entries
        .iter()
        .map(|e| dataset.load(e))
        .collect::<Result<_>>()?;
    let val_prepared: Vec<Prepared<S>> = val_entries
        .iter()
        .map(|e| prepare(&dataset.load(e)?, &cfg.model))
        .collect::<Result<_>>()?;

    let mut model = build_model::<S>(&cfg.model, cfg.seed)?;
    let mut adam = Adam::new();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5851_f42d_4c95_7f2d);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0usize;
    let mut epoch = 0usize;

    let log_path = out_dir.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path)?);
    let best_path = out_dir.join("best.ckpt");
    let final_path = out_dir.join("final.ckpt");
    let mut best_val = f64::INFINITY;
    let mut last_val = f64::INFINITY;

    let inv_samples = 1.0 / (cfg.batch_size * cfg.grad_accum_steps) as f64;
    for iter in 0..cfg.total_iters {
        let started = Instant::now();
        let lr = lr_schedule(iter, cfg)?;
        let mut grads = Gradients::new();
        let mut sums = LossSums::default();
        let mut batch_ids = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.grad_accum_steps {
            batch_ids.clear();
            for _ in 0..cfg.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut order_rng);
                    cursor = 0;
                    epoch += 1;
                }
                let sample = &train_samples[order[cursor]];
                cursor += 1;
                batch_ids.push(sample.id.clone());

                let mut rng = sample_rng(cfg.seed, &sample.id, epoch);
                let augmented = augment(sample, &cfg.augment, &mut rng)?;
                let prep = prepare::<S>(&augmented, &cfg.model)?;
                let (out, cache) = model.forward_grid(&prep.grid)?;
                let (bd, d_out) = unified_loss_grad(&out, &prep.target, &cfg.loss)?;
                if !bd.total.to_f64().is_finite() {
                    return Err(Error::NonFiniteLoss {
                        iter,
                        batch_ids,
                    });
                }
                sums.add(&bd);
                model.backward(&cache, &d_out, &mut grads)?;
            }
        }
        grads.scale(S::from_f64(inv_samples));
        adam.step(&mut model, &grads, lr);

        let mut val_metric = None;
        if (iter + 1) % cfg.val_every == 0 || iter + 1 == cfg.total_iters {
            let metric = validation_metric(&model, &val_prepared)?;
            last_val = metric;
            if metric < best_val {
                best_val = metric;
                save_checkpoint(&model, &best_path)?;
            }
            val_metric = Some(metric);
        }

        let (total, [ce, huber, dense, dice, hausdorff]) = sums.mean();
        let record = StepRecord {
            iter,
            lr,
            total,
            ce,
            huber,
            dense,
            dice,
            hausdorff,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            val_metric,
        };
        serde_json::to_writer(&mut log, &record)?;
        log.write_all(b"\n")?;
    }
    log.flush()?;
    save_checkpoint(&model, &final_path)?;

    Ok(TrainOutcome {
        best_checkpoint: best_path,
        final_checkpoint: final_path,
        log_path,
        best_val_metric: best_val,
        final_val_metric: last_val,
        param_count: model.param_count(),
    })
}

/// The model variants compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Full dual-branch model with CDFeLU coupling.
    Geounet,
    /// Dual-branch without the CDFeLU re-weighting.
    NoCdfelu,
    /// Contour branch alone (no pixel branch, hence no dense losses).
    ContourOnly,
    /// Pixel branch alone on the polar grid.
    PolarPixel,
    /// Pixel branch alone on the resized Cartesian frame.
    CartesianPixel,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Geounet,
        Variant::NoCdfelu,
        Variant::ContourOnly,
        Variant::PolarPixel,
        Variant::CartesianPixel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Geounet => "geounet",
            Variant::NoCdfelu => "no-cdfelu",
            Variant::ContourOnly => "contour-only",
            Variant::PolarPixel => "polar-pixel",
            Variant::CartesianPixel => "cartesian-pixel",
        }
    }

    /// Rewrites a base architecture into this variant's branch layout.
    pub fn apply(self, mut cfg: ModelConfig) -> ModelConfig {
        cfg.representation = Representation::Polar;
        cfg.use_contour_branch = true;
        cfg.use_pixel_branch = true;
        cfg.use_cdfelu = true;
        match self {
            Variant::Geounet => {}
            Variant::NoCdfelu => cfg.use_cdfelu = false,
            Variant::ContourOnly => {
                cfg.use_pixel_branch = false;
                cfg.use_cdfelu = false;
            }
            Variant::PolarPixel => {
                cfg.use_contour_branch = false;
                cfg.use_cdfelu = false;
            }
            Variant::CartesianPixel => {
                cfg.representation = Representation::Cartesian;
                cfg.use_contour_branch = false;
                cfg.use_cdfelu = false;
            }
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geounet" => Ok(Variant::Geounet),
            "no-cdfelu" => Ok(Variant::NoCdfelu),
            "contour-only" => Ok(Variant::ContourOnly),
            "polar-pixel" => Ok(Variant::PolarPixel),
            "cartesian-pixel" => Ok(Variant::CartesianPixel),
            other => Err(Error::InvalidConfig(format!(
                "unknown variant '{other}' (expected geounet, no-cdfelu, \
                 contour-only, polar-pixel, or cartesian-pixel)"
            ))),
        }
    }
}

/// One ablation comparison row: clinical table plus size and connectivity
/// diagnostics for a trained variant.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    /// Mean 8-connected component count of the raw test predictions, before
    /// any largest-component post-processing.
    pub mean_components: f64,
    pub table: ClinicalTable,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// One CSV row per variant with the comparison-table columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "variant,params,mean_components,\
             n1_dice_mean,n1_dice_std,\
             n1_maj_0.25,n1_maj_0.50,n1_maj_0.75,n1_min_0.25,n1_min_0.50,n1_min_0.75,\
             n2_dice_mean,n2_dice_std,\
             n2_maj_0.25,n2_maj_0.50,n2_maj_0.75,n2_min_0.25,n2_min_0.50,n2_min_0.75\n",
        );
        for row in &self.rows {
            let t = &row.table;
            out.push_str(&format!(
                "{},{},{:.3},{:.4},{:.4}",
                row.variant, row.params, row.mean_components, t.n1.dice_mean, t.n1.dice_std
            ));
            for f in t.n1.major_frac.iter().chain(&t.n1.minor_frac) {
                out.push_str(&format!(",{f:.4}"));
            }
            out.push_str(&format!(",{:.4},{:.4}", t.n2.dice_mean, t.n2.dice_std));
            for f in t.n2.major_frac.iter().chain(&t.n2.minor_frac) {
                out.push_str(&format!(",{f:.4}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Trains and evaluates all five variants on shared data and seed, emitting
/// the ablation comparison. Each variant's artifacts land in a subdirectory
/// of `out_dir` named after it.
pub fn run_ablation_suite<S: Scalar>(
    base: &TrainConfig,
    dataset: &Dataset,
    out_dir: &Path,
) -> Result<AblationReport> {
    let test_entries = dataset.split_entries(Split::Test);
    if test_entries.is_empty() {
        return Err(Error::Dataset("manifest has no test split".into()));
    }
    let test_samples: Vec<Sample> = test_entries
        .iter()
        .map(|e| dataset.load(e))
        .collect::<Result<_>>()?;
    let mm_per_pixel = test_samples[0].frame.mm_per_pixel;

    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let mut cfg = base.clone();
        cfg.model = variant.apply(base.model.clone());
        let outcome = train::<S>(&cfg, dataset, &out_dir.join(variant.as_str()))?;
        let model: Model<S> = load_checkpoint(&outcome.best_checkpoint)?;

        let mut predictions: Vec<(CartesianMask, Label)> = Vec::new();
        let mut component_sum = 0.0;
        for sample in &test_samples {
            let frame = frame_to_scalar::<S>(&sample.frame)?;
            let (mask, _contour) = infer(&model, &frame, InferMode::Plain)?;
            let (_, areas) = label_components(&mask.pixels);
            component_sum += areas.len() as f64;
            predictions.push((mask, sample.label));
        }
        let triples: Vec<(&CartesianMask, &CartesianMask, Label)> = predictions
            .iter()
            .zip(&test_samples)
            .map(|((pred, label), sample)| (pred, &sample.mask, *label))
            .collect();
        let table = clinical_report(&triples, mm_per_pixel)?;
        rows.push(AblationRow {
            variant: variant.as_str().to_string(),
            params: outcome.param_count,
            mean_components: component_sum / test_samples.len() as f64,
            table,
        });
    }
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::make_dataset;
    use approx::assert_relative_eq;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            grad_accum_steps: 1,
            lr_start: 1e-3,
            lr_end: 1e-4,
            total_iters: 3,
            seed: 7,
            val_every: 2,
            augment: AugmentConfig {
                enabled: false,
                ..AugmentConfig::default()
            },
            model: ModelConfig {
                r: 16,
                depth: 2,
                base_channels: 2,
                ..ModelConfig::default()
            },
            loss: LossWeights::default(),
        }
    }

    fn tiny_dataset(dir: &Path) -> Dataset {
        make_dataset(6, 2, 4, 0.5, 11, 64, dir).unwrap();
        Dataset::open(dir).unwrap()
    }

    fn params_of<S: Scalar>(model: &Model<S>) -> HashMap<String, ArrayD<S>> {
        let mut map = HashMap::new();
        model.visit(&mut |name, view| {
            map.insert(name, view.to_owned());
        });
        map
    }

    #[test]
    fn schedule_hits_the_published_endpoints() {
        let cfg = TrainConfig {
            total_iters: 50_000,
            ..TrainConfig::default()
        };
        assert_relative_eq!(lr_schedule(0, &cfg).unwrap(), 1e-4);
        assert_relative_eq!(lr_schedule(50_000, &cfg).unwrap(), 1e-7);
        assert_relative_eq!(
            lr_schedule(25_000, &cfg).unwrap(),
            (1e-4 + 1e-7) / 2.0,
            max_relative = 1e-12
        );
        let mut prev = f64::INFINITY;
        for iter in (0..=50_000).step_by(1000) {
            let lr = lr_schedule(iter, &cfg).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
        assert!(lr_schedule(50_001, &cfg).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_rates() {
        let cfg = TrainConfig {
            lr_start: 1e-7,
            lr_end: 1e-4,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            lr_end: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            total_iters: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn variant_strings_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("resnet".parse::<Variant>().is_err());
        let contour = Variant::ContourOnly.apply(ModelConfig::default());
        assert!(!contour.use_pixel_branch && contour.use_contour_branch);
        assert!(contour.validate().is_ok());
        let cartesian = Variant::CartesianPixel.apply(ModelConfig::default());
        assert_eq!(cartesian.representation, Representation::Cartesian);
        assert!(cartesian.validate().is_ok());
    }

    #[test]
    fn adam_first_step_moves_against_the_gradient_by_lr() {
        let cfg = tiny_cfg().model;
        let mut model = build_model::<f64>(&cfg, 1).unwrap();
        let before = params_of(&model);
        let mut grads = Gradients::new();
        model.visit(&mut |name, view| {
            grads.accumulate(&name, ArrayD::from_elem(view.raw_dim(), 1.0));
        });
        let mut adam = Adam::new();
        adam.step(&mut model, &grads, 1e-2);
        let after = params_of(&model);
        for (name, old) in &before {
            let moved = &after[name] - old;
            for d in moved.iter() {
                assert_relative_eq!(*d, -1e-2, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn gradient_accumulation_matches_the_large_batch() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset(dir.path());
        let mut cfg = tiny_cfg();
        cfg.total_iters = 1;
        cfg.val_every = 1;
        cfg.lr_start = 1e-3;
        cfg.lr_end = 1e-3;

        cfg.batch_size = 6;
        cfg.grad_accum_steps = 1;
        let big = dir.path().join("big");
        train::<f64>(&cfg, &dataset, &big).unwrap();

        cfg.batch_size = 3;
        cfg.grad_accum_steps = 2;
        let accum = dir.path().join("accum");
        train::<f64>(&cfg, &dataset, &accum).unwrap();

        let a: Model<f64> = load_checkpoint(&big.join("final.ckpt")).unwrap();
        let b: Model<f64> = load_checkpoint(&accum.join("final.ckpt")).unwrap();
        let (pa, pb) = (params_of(&a), params_of(&b));
        assert_eq!(pa.len(), pb.len());
        for (name, va) in &pa {
            let vb = &pb[name];
            for (x, y) in va.iter().zip(vb.iter()) {
                assert!((x - y).abs() < 1e-6, "{name}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn same_seed_reproduces_the_validation_metric() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset(dir.path());
        let cfg = tiny_cfg();
        let first = train::<f64>(&cfg, &dataset, &dir.path().join("a")).unwrap();
        let second = train::<f64>(&cfg, &dataset, &dir.path().join("b")).unwrap();
        assert!((first.final_val_metric - second.final_val_metric).abs() < 1e-6);
        assert!((first.best_val_metric - second.best_val_metric).abs() < 1e-6);
    }

    #[test]
    fn training_reduces_the_loss_on_a_tiny_overfit() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset(4, 2, 2, 0.5, 3, 64, dir.path()).unwrap();
        let dataset = Dataset::open(dir.path()).unwrap();
        let mut cfg = tiny_cfg();
        cfg.model.base_channels = 4;
        cfg.total_iters = 40;
        cfg.val_every = 40;
        cfg.lr_start = 3e-3;
        cfg.lr_end = 1e-3;
        let outcome = train::<f64>(&cfg, &dataset, &dir.path().join("run")).unwrap();

        let log = std::fs::read_to_string(&outcome.log_path).unwrap();
        let records: Vec<StepRecord> = log
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(records.len(), 40);
        let first = records[0].total;
        let last5: f64 = records[35..].iter().map(|r| r.total).sum::<f64>() / 5.0;
        assert!(
            last5 < 0.5 * first,
            "loss failed to drop: {first} -> {last5}"
        );
        assert!(outcome.best_checkpoint.exists());
        assert!(outcome.final_checkpoint.exists());
        assert!(outcome.best_val_metric.is_finite());
    }

    #[test]
    fn contour_only_logs_omit_dense_terms() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset(dir.path());
        let mut cfg = tiny_cfg();
        cfg.total_iters = 2;

        cfg.model = Variant::ContourOnly.apply(cfg.model.clone());
        let contour = train::<f64>(&cfg, &dataset, &dir.path().join("contour")).unwrap();
        let log = std::fs::read_to_string(&contour.log_path).unwrap();
        assert!(!log.contains("\"dense\""));
        assert!(log.contains("\"ce\"") && log.contains("\"huber\""));

        cfg.model = Variant::PolarPixel.apply(cfg.model.clone());
        let pixel = train::<f64>(&cfg, &dataset, &dir.path().join("pixel")).unwrap();
        let log = std::fs::read_to_string(&pixel.log_path).unwrap();
        assert!(log.contains("\"dense\""));
        assert!(!log.contains("\"ce\""));
    }

    #[test]
    fn ablation_suite_produces_the_five_row_table() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset(dir.path());
        let mut cfg = tiny_cfg();
        cfg.total_iters = 2;
        cfg.val_every = 2;
        let report =
            run_ablation_suite::<f32>(&cfg, &dataset, &dir.path().join("ablation")).unwrap();
        assert_eq!(report.rows.len(), 5);

        let by_name: HashMap<&str, &AblationRow> = report
            .rows
            .iter()
            .map(|r| (r.variant.as_str(), r))
            .collect();
        assert!(
            by_name["contour-only"].params < by_name["geounet"].params,
            "dropping the pixel branch must shrink the model"
        );
        assert!(report.rows.iter().all(|r| r.mean_components >= 1.0));

        let csv = report.to_csv();
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines.len(), 6, "header plus five variants");
        let cols = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == cols));
    }
}
