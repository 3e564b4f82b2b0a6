//! The dual-branch polar segmentation network.
//!
//! A small UNet (encoder/decoder with skip connections, channel doubling,
//! zero padding) feeds two 1x1-convolution heads on the final feature map:
//!
//! * **Contour branch**: one channel; a softmax across each row turns it
//!   into a per-angle distribution over boundary radii (`p_c`), whose
//!   expectation is the real-valued contour `s_c`.
//! * **Pixel branch**: two channels (background/foreground) with a
//!   channel-wise softmax; the foreground probability is `p_pix`.
//!
//! The CDFeLU coupling multiplies `p_pix` by `1 - cumsum(p_c)` along the
//! radius — pixels past the predicted boundary are suppressed by how much
//! contour mass already accumulated. The cumulative sum is inclusive, so the
//! boundary bin itself is zeroed; that is the published formulation and is
//! kept as is.
//!
//! Zero (not circular) angular padding is deliberate: the wrap-seam artifact
//! it causes is what the padded inference mode exists to fix.

mod checkpoint;
mod nn;

pub use checkpoint::{checkpoint_dtype, load_checkpoint, save_checkpoint};
pub use nn::{Conv2d, DoubleConv, Gradients};

use crate::error::{Error, Result};
use crate::geometry::{contour_to_mask, PolarFrame, PolarGeom, PolarMask, SoftContour};
use crate::scalar::Scalar;
use ndarray::{s, Array1, Array2, Array3, Axis};
use nn::{maxpool2, maxpool2_backward, upsample2, upsample2_backward, DoubleConvCache};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Input domain the network operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    #[default]
    Polar,
    Cartesian,
}

/// Architecture and branch configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Polar resolution: angle rows and radius columns (input is `r x r`).
    #[serde(default = "default_r")]
    pub r: usize,
    /// Number of pooling levels in the UNet.
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Channels at the first level; doubled per level.
    #[serde(default = "default_base_channels")]
    pub base_channels: usize,
    #[serde(default = "default_true")]
    pub use_pixel_branch: bool,
    /// The contour branch can be disabled for pixel-only baselines; the
    /// Cartesian representation always disables it (a per-angle contour is
    /// meaningless off-polar).
    #[serde(default = "default_true")]
    pub use_contour_branch: bool,
    #[serde(default = "default_true")]
    pub use_cdfelu: bool,
    #[serde(default)]
    pub representation: Representation,
}

fn default_r() -> usize {
    256
}
fn default_depth() -> usize {
    4
}
fn default_base_channels() -> usize {
    16
}
fn default_true() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            r: default_r(),
            depth: default_depth(),
            base_channels: default_base_channels(),
            use_pixel_branch: true,
            use_contour_branch: true,
            use_cdfelu: true,
            representation: Representation::Polar,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::InvalidConfig(format!(
                "depth {} below minimum of 2",
                self.depth
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::InvalidConfig("base_channels must be positive".into()));
        }
        if self.r % (1 << self.depth) != 0 {
            return Err(Error::InvalidConfig(format!(
                "resolution {} not divisible by 2^depth = {}",
                self.r,
                1 << self.depth
            )));
        }
        if self.use_cdfelu && !(self.use_pixel_branch && self.use_contour_branch) {
            return Err(Error::InvalidConfig(
                "CDFeLU requires both the pixel and contour branches".into(),
            ));
        }
        if !self.use_pixel_branch && !self.use_contour_branch {
            return Err(Error::InvalidConfig("model needs at least one branch".into()));
        }
        if self.representation == Representation::Cartesian && self.use_contour_branch {
            return Err(Error::InvalidConfig(
                "the contour branch only exists in the polar representation".into(),
            ));
        }
        Ok(())
    }
}

/// Per-angle distribution over boundary radii; every row sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourProbMap<S> {
    pub probs: Array2<S>,
}

impl<S: Scalar> ContourProbMap<S> {
    pub fn new(probs: Array2<S>) -> Result<Self> {
        let tol = S::from_f64(1e-5);
        for (i, row) in probs.rows().into_iter().enumerate() {
            let sum = row.sum();
            if (sum - S::one()).abs() > tol {
                return Err(Error::InvalidConfig(format!(
                    "contour probability row {i} sums to {sum}, not 1"
                )));
            }
        }
        if probs.iter().any(|&p| p < S::zero() || p > S::one() || !p.is_finite()) {
            return Err(Error::NonFinite("contour probabilities outside [0,1]".into()));
        }
        Ok(Self { probs })
    }
}

/// Per-pixel foreground probability (raw, or CDFeLU-gated).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelProbMap<S> {
    pub probs: Array2<S>,
}

impl<S: Scalar> PixelProbMap<S> {
    pub fn new(probs: Array2<S>) -> Result<Self> {
        if probs.iter().any(|&p| p < S::zero() || p > S::one() || !p.is_finite()) {
            return Err(Error::NonFinite("pixel probabilities outside [0,1]".into()));
        }
        Ok(Self { probs })
    }
}

/// Everything the network predicts for one input.
#[derive(Debug, Clone)]
pub struct ForwardOutput<S> {
    /// Present when the contour branch is enabled.
    pub p_c: Option<ContourProbMap<S>>,
    pub s_c: Option<SoftContour<S>>,
    /// Present when the pixel branch is enabled.
    pub p_pix: Option<PixelProbMap<S>>,
    /// Present when CDFeLU is enabled.
    pub s_pix: Option<PixelProbMap<S>>,
}

/// Gradients of a loss with respect to each forward output. All fields are
/// optional; absent means zero.
#[derive(Debug, Clone)]
pub struct OutputGrads<S> {
    pub d_p_c: Option<Array2<S>>,
    pub d_s_c: Option<Array1<S>>,
    pub d_p_pix: Option<Array2<S>>,
    pub d_s_pix: Option<Array2<S>>,
}

impl<S> Default for OutputGrads<S> {
    fn default() -> Self {
        Self {
            d_p_c: None,
            d_s_c: None,
            d_p_pix: None,
            d_s_pix: None,
        }
    }
}

/// Forward-pass state needed by [`Model::backward`].
pub struct ForwardCache<S> {
    enc: Vec<DoubleConvCache<S>>,
    pools: Vec<Array3<u8>>,
    bottleneck: DoubleConvCache<S>,
    reduce: Vec<nn::ConvCache<S>>,
    dec: Vec<DoubleConvCache<S>>,
    contour_head: Option<nn::ConvCache<S>>,
    pixel_head: Option<nn::ConvCache<S>>,
    p_c: Option<Array2<S>>,
    p_fg: Option<Array2<S>>,
    /// CDFeLU factor `1 - cumsum(p_c)` per row.
    cdf_factor: Option<Array2<S>>,
}

/// The dual-branch UNet.
#[derive(Debug, Clone)]
pub struct Model<S> {
    pub cfg: ModelConfig,
    enc: Vec<DoubleConv<S>>,
    bottleneck: DoubleConv<S>,
    reduce: Vec<Conv2d<S>>,
    dec: Vec<DoubleConv<S>>,
    contour_head: Option<Conv2d<S>>,
    pixel_head: Option<Conv2d<S>>,
}

/// Builds a model with He-initialized weights, deterministic per seed.
pub fn build_model<S: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Model<S>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ch = |level: usize| cfg.base_channels << level;

    let mut enc = Vec::new();
    for l in 0..cfg.depth {
        let in_ch = if l == 0 { 1 } else { ch(l - 1) };
        enc.push(DoubleConv::new(&format!("enc{l}"), in_ch, ch(l), &mut rng));
    }
    let bottleneck = DoubleConv::new("bottleneck", ch(cfg.depth - 1), ch(cfg.depth), &mut rng);
    let mut reduce = Vec::new();
    let mut dec = Vec::new();
    for l in 0..cfg.depth {
        reduce.push(Conv2d::new(&format!("reduce{l}"), ch(l + 1), ch(l), 1, &mut rng));
        dec.push(DoubleConv::new(&format!("dec{l}"), 2 * ch(l), ch(l), &mut rng));
    }
    let contour_head = cfg
        .use_contour_branch
        .then(|| Conv2d::new("head.contour", cfg.base_channels, 1, 1, &mut rng));
    let pixel_head = cfg
        .use_pixel_branch
        .then(|| Conv2d::new("head.pixel", cfg.base_channels, 2, 1, &mut rng));

    Ok(Model {
        cfg: cfg.clone(),
        enc,
        bottleneck,
        reduce,
        dec,
        contour_head,
        pixel_head,
    })
}

/// Row-wise stable softmax.
pub fn row_softmax<S: Scalar>(z: &Array2<S>) -> Array2<S> {
    let mut p = z.clone();
    for mut row in p.rows_mut() {
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    p
}

/// Backward of [`row_softmax`]: maps probability-space gradients to logit
/// space, `dz = p * (dp - sum(dp * p))` per row.
pub fn row_softmax_backward<S: Scalar>(p: &Array2<S>, d_p: &Array2<S>) -> Array2<S> {
    let mut dz = Array2::zeros(p.dim());
    for ((mut dz_row, p_row), dp_row) in dz
        .rows_mut()
        .into_iter()
        .zip(p.rows())
        .zip(d_p.rows())
    {
        let dot = p_row
            .iter()
            .zip(dp_row.iter())
            .fold(S::zero(), |acc, (&pv, &dv)| acc + pv * dv);
        for ((dzv, &pv), &dv) in dz_row.iter_mut().zip(p_row).zip(dp_row) {
            *dzv = pv * (dv - dot);
        }
    }
    dz
}

/// Contour-branch readout from raw logits: row softmax plus its expectation
/// `s_c[i] = sum_j j * p_c[i, j]`.
pub fn soft_contour_from_logits<S: Scalar>(
    logits: &Array2<S>,
) -> Result<(ContourProbMap<S>, SoftContour<S>)> {
    let p = row_softmax(logits);
    let s = soft_argmax(&p);
    Ok((ContourProbMap::new(p)?, SoftContour::new(s)))
}

/// Expected column index per row.
pub fn soft_argmax<S: Scalar>(p: &Array2<S>) -> Array1<S> {
    Array1::from_iter(p.rows().into_iter().map(|row| {
        row.iter()
            .enumerate()
            .fold(S::zero(), |acc, (j, &pv)| acc + S::from_usize(j) * pv)
    }))
}

/// CDFeLU coupling: `out[i, r] = p_pix[i, r] * (1 - sum_{j<=r} p_c[i, j])`,
/// clamped to `[0, 1]` against round-off. The prefix sum is inclusive.
pub fn cdfelu<S: Scalar>(
    p_pix: &PixelProbMap<S>,
    p_c: &ContourProbMap<S>,
) -> Result<PixelProbMap<S>> {
    if p_pix.probs.dim() != p_c.probs.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", p_pix.probs.dim()),
            got: format!("{:?}", p_c.probs.dim()),
        });
    }
    let factor = cdf_factor(&p_c.probs);
    let out = (&p_pix.probs * &factor).mapv(|v| v.max(S::zero()).min(S::one()));
    PixelProbMap::new(out)
}

/// The gating factor `1 - inclusive_cumsum(p_c)` per row.
fn cdf_factor<S: Scalar>(p_c: &Array2<S>) -> Array2<S> {
    let mut factor = Array2::zeros(p_c.dim());
    for (mut out_row, p_row) in factor.rows_mut().into_iter().zip(p_c.rows()) {
        let mut acc = S::zero();
        for (o, &p) in out_row.iter_mut().zip(p_row) {
            acc += p;
            *o = S::one() - acc;
        }
    }
    factor
}

/// Analytic gradients of [`cdfelu`] with respect to both inputs, treating
/// the round-off clamp as identity (it only activates at machine epsilon).
pub fn cdfelu_backward<S: Scalar>(
    p_pix: &Array2<S>,
    p_c: &Array2<S>,
    grad_out: &Array2<S>,
) -> (Array2<S>, Array2<S>) {
    let factor = cdf_factor(p_c);
    let d_p_pix = grad_out * &factor;
    // d out[i, r] / d p_c[i, j] = -p_pix[i, r] for j <= r, so each p_c entry
    // collects the suffix sum of grad_out * p_pix.
    let weighted = grad_out * p_pix;
    let mut d_p_c = Array2::zeros(p_c.dim());
    for (mut d_row, w_row) in d_p_c.rows_mut().into_iter().zip(weighted.rows()) {
        let mut suffix = S::zero();
        for (d, &w) in d_row.iter_mut().rev().zip(w_row.iter().rev()) {
            suffix += w;
            *d = -suffix;
        }
    }
    (d_p_pix, d_p_c)
}

/// Foreground probability of a two-channel logit pair, numerically stable.
fn channel_pair_softmax<S: Scalar>(z: &Array3<S>) -> Array2<S> {
    let (_, h, w) = z.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let d = z[[1, i, j]] - z[[0, i, j]];
        if d >= S::zero() {
            S::one() / (S::one() + (-d).exp())
        } else {
            let e = d.exp();
            e / (S::one() + e)
        }
    })
}

impl<S: Scalar> Model<S> {
    /// Runs the network on a polar frame (possibly wrap-padded, so the row
    /// count may exceed `r`; it must stay divisible by `2^depth`).
    pub fn forward(&self, polar: &PolarFrame<S>) -> Result<(ForwardOutput<S>, ForwardCache<S>)> {
        if self.cfg.representation != Representation::Polar {
            return Err(Error::InvalidConfig(
                "this model expects Cartesian input; use forward_grid".into(),
            ));
        }
        self.forward_grid(&polar.pixels)
    }

    /// Representation-agnostic forward on a raw `rows x r` grid.
    pub fn forward_grid(&self, grid: &Array2<S>) -> Result<(ForwardOutput<S>, ForwardCache<S>)> {
        let (rows, cols) = grid.dim();
        if cols != self.cfg.r {
            return Err(Error::ShapeMismatch {
                expected: format!("{} columns", self.cfg.r),
                got: format!("{cols}"),
            });
        }
        if rows % (1 << self.cfg.depth) != 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("row count divisible by {}", 1 << self.cfg.depth),
                got: format!("{rows}"),
            });
        }

        let mut x = grid
            .clone()
            .insert_axis(Axis(0));
        let mut enc_caches = Vec::new();
        let mut pools = Vec::new();
        let mut skips = Vec::new();
        for block in &self.enc {
            let (a, cache) = block.forward(&x);
            enc_caches.push(cache);
            let (pooled, idx) = maxpool2(&a);
            skips.push(a);
            pools.push(idx);
            x = pooled;
        }
        let (mut a, bott_cache) = self.bottleneck.forward(&x);
        let mut reduce_caches: Vec<Option<nn::ConvCache<S>>> =
            (0..self.cfg.depth).map(|_| None).collect();
        let mut dec_caches: Vec<Option<DoubleConvCache<S>>> =
            (0..self.cfg.depth).map(|_| None).collect();
        for l in (0..self.cfg.depth).rev() {
            let up = upsample2(&a);
            let (reduced, r_cache) = self.reduce[l].forward(&up);
            let merged = ndarray::concatenate(Axis(0), &[skips[l].view(), reduced.view()])
                .expect("skip and upsampled sizes match");
            let (out, d_cache) = self.dec[l].forward(&merged);
            reduce_caches[l] = Some(r_cache);
            dec_caches[l] = Some(d_cache);
            a = out;
        }

        let mut cache = ForwardCache {
            enc: enc_caches,
            pools,
            bottleneck: bott_cache,
            reduce: reduce_caches.into_iter().map(Option::unwrap).collect(),
            dec: dec_caches.into_iter().map(Option::unwrap).collect(),
            contour_head: None,
            pixel_head: None,
            p_c: None,
            p_fg: None,
            cdf_factor: None,
        };
        let mut out = ForwardOutput {
            p_c: None,
            s_c: None,
            p_pix: None,
            s_pix: None,
        };

        if let Some(head) = &self.contour_head {
            let (logits, h_cache) = head.forward(&a);
            let logits2 = logits.index_axis(Axis(0), 0).to_owned();
            let p = row_softmax(&logits2);
            out.s_c = Some(SoftContour::new(soft_argmax(&p)));
            cache.contour_head = Some(h_cache);
            cache.p_c = Some(p.clone());
            out.p_c = Some(ContourProbMap::new(p)?);
        }
        if let Some(head) = &self.pixel_head {
            let (logits, h_cache) = head.forward(&a);
            let p_fg = channel_pair_softmax(&logits);
            cache.pixel_head = Some(h_cache);
            cache.p_fg = Some(p_fg.clone());
            if self.cfg.use_cdfelu {
                let factor = cdf_factor(cache.p_c.as_ref().expect("validated config"));
                let gated = (&p_fg * &factor).mapv(|v| v.max(S::zero()).min(S::one()));
                cache.cdf_factor = Some(factor);
                out.s_pix = Some(PixelProbMap::new(gated)?);
            }
            out.p_pix = Some(PixelProbMap::new(p_fg)?);
        }
        Ok((out, cache))
    }

    /// Propagates output-space gradients down to every parameter,
    /// accumulating into `grads`.
    pub fn backward(
        &self,
        cache: &ForwardCache<S>,
        d_out: &OutputGrads<S>,
        grads: &mut Gradients<S>,
    ) -> Result<()> {
        let mut d_features: Option<Array3<S>> = None;

        // Pixel branch: raw and gated gradients meet at p_fg.
        if let Some(p_fg) = &cache.p_fg {
            let mut d_p_fg = Array2::<S>::zeros(p_fg.dim());
            if let Some(d) = &d_out.d_p_pix {
                d_p_fg += d;
            }
            if let Some(d_gated) = &d_out.d_s_pix {
                let factor = cache
                    .cdf_factor
                    .as_ref()
                    .ok_or(Error::MissingBranch("cdfelu"))?;
                d_p_fg = d_p_fg + d_gated * factor;
            }
            // Through the two-channel softmax: dz1 = dp * p * (1 - p).
            let dz1 = &d_p_fg * p_fg * &p_fg.mapv(|v| S::one() - v);
            let (h, w) = dz1.dim();
            let mut dz = Array3::zeros((2, h, w));
            dz.index_axis_mut(Axis(0), 0).assign(&dz1.mapv(|v| -v));
            dz.index_axis_mut(Axis(0), 1).assign(&dz1);
            let head = self.pixel_head.as_ref().ok_or(Error::MissingBranch("pixel"))?;
            let g = head.backward(
                cache.pixel_head.as_ref().ok_or(Error::MissingBranch("pixel"))?,
                &dz,
                grads,
            );
            d_features = Some(g);
        }

        // Contour branch: p_c gradients from the loss, the soft-argmax, and
        // the CDFeLU factor all add up before the softmax backward.
        if let Some(p_c) = &cache.p_c {
            let mut d_p = Array2::<S>::zeros(p_c.dim());
            if let Some(d) = &d_out.d_p_c {
                d_p += d;
            }
            if let Some(d_s) = &d_out.d_s_c {
                for (mut row, &ds) in d_p.rows_mut().into_iter().zip(d_s) {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v += ds * S::from_usize(j);
                    }
                }
            }
            if let Some(d_gated) = &d_out.d_s_pix {
                let p_fg = cache.p_fg.as_ref().ok_or(Error::MissingBranch("pixel"))?;
                let weighted = d_gated * p_fg;
                for (mut d_row, w_row) in d_p.rows_mut().into_iter().zip(weighted.rows()) {
                    let mut suffix = S::zero();
                    for (d, &w) in d_row.iter_mut().rev().zip(w_row.iter().rev()) {
                        suffix += w;
                        *d -= suffix;
                    }
                }
            }
            let dz = row_softmax_backward(p_c, &d_p).insert_axis(Axis(0));
            let head = self
                .contour_head
                .as_ref()
                .ok_or(Error::MissingBranch("contour"))?;
            let g = head.backward(
                cache
                    .contour_head
                    .as_ref()
                    .ok_or(Error::MissingBranch("contour"))?,
                &dz,
                grads,
            );
            d_features = Some(match d_features {
                Some(existing) => existing + g,
                None => g,
            });
        }

        let mut g = d_features.ok_or(Error::MissingBranch("any head"))?;

        // Decoder, reversed: dec block, channel split, reduce, upsample.
        let mut skip_grads: Vec<Option<Array3<S>>> = (0..self.cfg.depth).map(|_| None).collect();
        for l in 0..self.cfg.depth {
            let g_merged = self.dec[l].backward(&cache.dec[l], &g, grads);
            let skip_ch = self.cfg.base_channels << l;
            let g_skip = g_merged.slice(s![..skip_ch, .., ..]).to_owned();
            let g_up = g_merged.slice(s![skip_ch.., .., ..]).to_owned();
            skip_grads[l] = Some(g_skip);
            let g_red = self.reduce[l].backward(&cache.reduce[l], &g_up, grads);
            g = upsample2_backward(&g_red);
        }
        g = self.bottleneck.backward(&cache.bottleneck, &g, grads);

        // Encoder, reversed: un-pool, add the skip gradient, conv block.
        for l in (0..self.cfg.depth).rev() {
            let mut g_full = maxpool2_backward(&cache.pools[l], &g);
            g_full += skip_grads[l].as_ref().expect("filled above");
            g = self.enc[l].backward(&cache.enc[l], &g_full, grads);
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit(&mut |_, view| count += view.len());
        count
    }

    /// Visits every parameter as `(name, view)`, in a fixed order.
    pub fn visit(&self, f: &mut impl FnMut(String, ndarray::ArrayViewD<'_, S>)) {
        for block in &self.enc {
            block.visit(f);
        }
        self.bottleneck.visit(f);
        for l in 0..self.cfg.depth {
            self.reduce[l].visit(f);
            self.dec[l].visit(f);
        }
        if let Some(h) = &self.contour_head {
            h.visit(f);
        }
        if let Some(h) = &self.pixel_head {
            h.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, ndarray::ArrayViewMutD<'_, S>)) {
        for block in &mut self.enc {
            block.visit_mut(f);
        }
        self.bottleneck.visit_mut(f);
        for l in 0..self.cfg.depth {
            self.reduce[l].visit_mut(f);
            self.dec[l].visit_mut(f);
        }
        if let Some(h) = &mut self.contour_head {
            h.visit_mut(f);
        }
        if let Some(h) = &mut self.pixel_head {
            h.visit_mut(f);
        }
    }
}

/// Binarizes a forward output into a polar mask: the contour branch wins
/// when present (its prefix rows guarantee a single Cartesian component);
/// pixel-only models threshold the (gated) foreground probability at 0.5.
pub fn predict_mask<S: Scalar>(out: &ForwardOutput<S>, geom: PolarGeom) -> Result<PolarMask> {
    if let Some(s_c) = &out.s_c {
        return contour_to_mask(s_c, geom);
    }
    let probs = out
        .s_pix
        .as_ref()
        .or(out.p_pix.as_ref())
        .ok_or(Error::MissingBranch("contour or pixel"))?;
    let half = S::from_f64(0.5);
    let pixels = probs.probs.mapv(|p| u8::from(p > half));
    PolarMask::new(pixels, geom)
}
