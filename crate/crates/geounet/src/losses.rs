//! Training penalties: contour cross-entropy, Huber contour regression, soft
//! Dice, a distance-transform Hausdorff surrogate, and the unified objective
//! that combines them.
//!
//! Every loss has a value-only form and a `_grad` form returning the value
//! together with its gradient with respect to the prediction.  The distance
//! transforms inside the Hausdorff term are treated as constants during
//! differentiation, and clamps are treated as the identity, matching the
//! conventions used by the network backward pass.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mask_to_contour_depth, ContourDepthMap, PolarMask, SoftContour};
use crate::model::{ContourProbMap, ForwardOutput, OutputGrads, PixelProbMap};
use crate::scalar::Scalar;

/// Probability clamp for the cross-entropy logs, chosen for 32-bit stability.
const CE_EPS: f64 = 1e-7;
/// Smoothing constant in the soft-Dice numerator and denominator.
const DICE_EPS: f64 = 1e-5;
/// Default exponent on the distance-transform weights of the Hausdorff term.
pub const HAUSDORFF_ALPHA: f64 = 2.0;

fn default_lambda_dice() -> f64 {
    0.9
}

fn default_term_weight() -> f64 {
    1.0
}

/// Relative weights of the loss terms in the unified objective.
///
/// `lambda_dice` splits the dense (pixel) loss between its Dice and Hausdorff
/// components; the three `w_*` weights scale the cross-entropy, Huber, and
/// dense terms in the total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Dice share of the dense loss; the Hausdorff part gets `1 - lambda_dice`.
    #[serde(default = "default_lambda_dice")]
    pub lambda_dice: f64,
    #[serde(default = "default_term_weight")]
    pub w_ce: f64,
    #[serde(default = "default_term_weight")]
    pub w_huber: f64,
    #[serde(default = "default_term_weight")]
    pub w_dense: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_dice: default_lambda_dice(),
            w_ce: default_term_weight(),
            w_huber: default_term_weight(),
            w_dense: default_term_weight(),
        }
    }
}

impl LossWeights {
    /// Checks the configuration-level invariants: `lambda_dice` strictly
    /// inside `(0, 1)` and all term weights finite and non-negative.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_dice.is_finite() && 0.0 < self.lambda_dice && self.lambda_dice < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda_dice must lie in (0, 1), got {}",
                self.lambda_dice
            )));
        }
        for (name, w) in [
            ("w_ce", self.w_ce),
            ("w_huber", self.w_huber),
            ("w_dense", self.w_dense),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-term decomposition of the unified objective.
///
/// `ce`, `huber`, and `dense` are the *weighted* contributions and sum to
/// `total`; `dice` and `hausdorff` are the unweighted components of the dense
/// term, reported for logging. A term is `None` when its branch is disabled.
#[derive(Debug, Clone, Serialize)]
pub struct LossBreakdown<S> {
    pub total: S,
    pub ce: Option<S>,
    pub huber: Option<S>,
    pub dense: Option<S>,
    pub dice: Option<S>,
    pub hausdorff: Option<S>,
}

fn check_contour_shapes<S: Scalar>(probs: &Array2<S>, y_c: &ContourDepthMap) -> Result<()> {
    if probs.nrows() != y_c.len() || probs.ncols() != y_c.r() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} x {} contour probabilities", y_c.len(), y_c.r()),
            got: format!("{} x {}", probs.nrows(), probs.ncols()),
        });
    }
    Ok(())
}

/// Cross-entropy between a per-row class distribution over radius bins and
/// the integer contour position, averaged over all `R^2` cells: every bin
/// contributes either `-log p` (at the target) or `-log(1 - p)` (elsewhere).
pub fn contour_ce<S: Scalar>(p_c: &ContourProbMap<S>, y_c: &ContourDepthMap) -> Result<S> {
    contour_ce_grad(p_c, y_c).map(|(v, _)| v)
}

/// [`contour_ce`] plus its gradient with respect to the probabilities.
pub fn contour_ce_grad<S: Scalar>(
    p_c: &ContourProbMap<S>,
    y_c: &ContourDepthMap,
) -> Result<(S, Array2<S>)> {
    let probs = &p_c.probs;
    check_contour_shapes(probs, y_c)?;
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("contour probabilities".into()));
    }
    let (classes, _) = y_c.class_targets();
    let eps = S::from_f64(CE_EPS);
    let lo = eps;
    let hi = S::one() - eps;
    let norm = S::from_usize(probs.len());
    let mut value = S::zero();
    let mut grad = Array2::zeros(probs.dim());
    for (i, (row, &y)) in probs.rows().into_iter().zip(&classes).enumerate() {
        for (j, &p) in row.iter().enumerate() {
            let p = p.max(lo).min(hi);
            if j == y as usize {
                value -= p.ln();
                grad[[i, j]] = -(S::one() / p) / norm;
            } else {
                value -= (S::one() - p).ln();
                grad[[i, j]] = (S::one() / (S::one() - p)) / norm;
            }
        }
    }
    Ok((value / norm, grad))
}

/// Huber penalty on the per-angle contour residual `d = y - s`, summed (not
/// averaged) over angles: `d^2 / 2` inside the unit band, `|d| - 1/2` outside.
pub fn huber<S: Scalar>(s_c: &SoftContour<S>, y_c: &ContourDepthMap) -> Result<S> {
    huber_grad(s_c, y_c).map(|(v, _)| v)
}

/// [`huber`] plus its gradient with respect to the soft contour.
pub fn huber_grad<S: Scalar>(
    s_c: &SoftContour<S>,
    y_c: &ContourDepthMap,
) -> Result<(S, Array1<S>)> {
    if s_c.len() != y_c.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} contour angles", y_c.len()),
            got: format!("{}", s_c.len()),
        });
    }
    if s_c.depth.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("soft contour".into()));
    }
    let (classes, _) = y_c.class_targets();
    let half = S::from_f64(0.5);
    let mut value = S::zero();
    let mut grad = Array1::zeros(s_c.len());
    for (i, (&s, &y)) in s_c.depth.iter().zip(&classes).enumerate() {
        let d = S::from_usize(y as usize) - s;
        if d.abs() < S::one() {
            value += d * d * half;
            grad[i] = -d;
        } else {
            value += d.abs() - half;
            grad[i] = -d.signum();
        }
    }
    Ok((value, grad))
}

fn check_pixel_shapes<S: Scalar>(pred: &Array2<S>, target: &PolarMask) -> Result<()> {
    if pred.dim() != target.pixels.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} x {} pixel grid", target.pixels.nrows(), target.pixels.ncols()),
            got: format!("{} x {}", pred.nrows(), pred.ncols()),
        });
    }
    Ok(())
}

/// Soft Dice loss `1 - (2 Σ p y + ε) / (Σ p + Σ y + ε)` over the polar grid.
pub fn soft_dice<S: Scalar>(pred: &PixelProbMap<S>, target: &PolarMask) -> Result<S> {
    soft_dice_grad(pred, target).map(|(v, _)| v)
}

/// [`soft_dice`] plus its gradient with respect to the predicted probabilities.
pub fn soft_dice_grad<S: Scalar>(
    pred: &PixelProbMap<S>,
    target: &PolarMask,
) -> Result<(S, Array2<S>)> {
    check_pixel_shapes(&pred.probs, target)?;
    let eps = S::from_f64(DICE_EPS);
    let mut inter = S::zero();
    let mut p_sum = S::zero();
    let mut y_sum = S::zero();
    for (&p, &y) in pred.probs.iter().zip(target.pixels.iter()) {
        p_sum += p;
        if y == 1 {
            inter += p;
            y_sum += S::one();
        }
    }
    let num = S::from_f64(2.0) * inter + eps;
    let den = p_sum + y_sum + eps;
    let value = S::one() - num / den;
    // d/dp_i [1 - N/D] = (N - 2 y_i D) / D^2 with dN/dp_i = 2 y_i, dD/dp_i = 1.
    let den2 = den * den;
    let grad = Array2::from_shape_fn(pred.probs.dim(), |idx| {
        let y = S::from_usize(target.pixels[idx] as usize);
        (num - S::from_f64(2.0) * y * den) / den2
    });
    Ok((value, grad))
}

/// Distance-transform Hausdorff surrogate: the mean over pixels of
/// `(p - y)^2 * (DT_y^alpha + DT_pred^alpha)`, where each `DT` is the
/// Euclidean distance to the respective mask boundary and the prediction is
/// binarized at 0.5 before its transform. Both distance maps are constants
/// with respect to the gradient.
pub fn hausdorff_dt<S: Scalar>(pred: &PixelProbMap<S>, target: &PolarMask, alpha: f64) -> Result<S> {
    hausdorff_dt_grad(pred, target, alpha).map(|(v, _)| v)
}

/// [`hausdorff_dt`] plus its gradient with respect to the predicted
/// probabilities.
pub fn hausdorff_dt_grad<S: Scalar>(
    pred: &PixelProbMap<S>,
    target: &PolarMask,
    alpha: f64,
) -> Result<(S, Array2<S>)> {
    check_pixel_shapes(&pred.probs, target)?;
    let half = S::from_f64(0.5);
    let bin_pred = pred.probs.mapv(|p| u8::from(p >= half));
    let dt_y = distance_to_boundary::<S>(&target.pixels);
    let dt_p = distance_to_boundary::<S>(&bin_pred);
    let a = S::from_f64(alpha);
    let weight =
        Array2::from_shape_fn(pred.probs.dim(), |idx| dt_y[idx].powf(a) + dt_p[idx].powf(a));
    let norm = S::from_usize(pred.probs.len());
    let mut value = S::zero();
    for ((&p, &y), &w) in pred.probs.iter().zip(target.pixels.iter()).zip(weight.iter()) {
        let d = p - S::from_usize(y as usize);
        value += d * d * w;
    }
    let grad = Array2::from_shape_fn(pred.probs.dim(), |idx| {
        let d = pred.probs[idx] - S::from_usize(target.pixels[idx] as usize);
        S::from_f64(2.0) * d * weight[idx] / norm
    });
    Ok((value / norm, grad))
}

/// Dense (pixel) loss: `lambda_dice`-weighted soft Dice plus the Hausdorff
/// surrogate at the default exponent.
pub fn dense_loss<S: Scalar>(
    pred: &PixelProbMap<S>,
    target: &PolarMask,
    w: &LossWeights,
) -> Result<S> {
    dense_loss_grad(pred, target, w).map(|(v, _)| v)
}

/// [`dense_loss`] plus its gradient and the two unweighted components.
#[allow(clippy::type_complexity)]
pub fn dense_loss_parts<S: Scalar>(
    pred: &PixelProbMap<S>,
    target: &PolarMask,
    w: &LossWeights,
) -> Result<(S, Array2<S>, S, S)> {
    let lam = S::from_f64(w.lambda_dice);
    let (dice_v, dice_g) = soft_dice_grad(pred, target)?;
    let (haus_v, haus_g) = hausdorff_dt_grad(pred, target, HAUSDORFF_ALPHA)?;
    let value = lam * dice_v + (S::one() - lam) * haus_v;
    let grad = dice_g * lam + haus_g * (S::one() - lam);
    Ok((value, grad, dice_v, haus_v))
}

/// [`dense_loss`] plus its gradient with respect to the prediction.
pub fn dense_loss_grad<S: Scalar>(
    pred: &PixelProbMap<S>,
    target: &PolarMask,
    w: &LossWeights,
) -> Result<(S, Array2<S>)> {
    dense_loss_parts(pred, target, w).map(|(v, g, _, _)| (v, g))
}

/// Full training objective for one sample: weighted contour cross-entropy and
/// Huber terms when the contour branch is present, plus the weighted dense
/// term on the gated pixel output (falling back to the raw pixel output when
/// coupling is disabled). Contour supervision targets are the mask's row sums
/// clipped to the class range.
pub fn unified_loss<S: Scalar>(
    out: &ForwardOutput<S>,
    y_pix: &PolarMask,
    w: &LossWeights,
) -> Result<LossBreakdown<S>> {
    unified_loss_grad(out, y_pix, w).map(|(bd, _)| bd)
}

/// [`unified_loss`] plus the gradients with respect to each network output.
pub fn unified_loss_grad<S: Scalar>(
    out: &ForwardOutput<S>,
    y_pix: &PolarMask,
    w: &LossWeights,
) -> Result<(LossBreakdown<S>, OutputGrads<S>)> {
    let y_c = mask_to_contour_depth(y_pix);
    let mut grads = OutputGrads::default();
    let mut bd = LossBreakdown {
        total: S::zero(),
        ce: None,
        huber: None,
        dense: None,
        dice: None,
        hausdorff: None,
    };
    match (&out.p_c, &out.s_c) {
        (Some(p_c), Some(s_c)) => {
            let w_ce = S::from_f64(w.w_ce);
            let w_hu = S::from_f64(w.w_huber);
            let (ce_v, ce_g) = contour_ce_grad(p_c, &y_c)?;
            let (hu_v, hu_g) = huber_grad(s_c, &y_c)?;
            bd.ce = Some(w_ce * ce_v);
            bd.huber = Some(w_hu * hu_v);
            bd.total += w_ce * ce_v + w_hu * hu_v;
            grads.d_p_c = Some(ce_g * w_ce);
            grads.d_s_c = Some(hu_g * w_hu);
        }
        (None, None) => {}
        _ => return Err(Error::MissingBranch("contour")),
    }
    if let Some(pix) = out.s_pix.as_ref().or(out.p_pix.as_ref()) {
        let w_de = S::from_f64(w.w_dense);
        let (dense_v, dense_g, dice_v, haus_v) = dense_loss_parts(pix, y_pix, w)?;
        bd.dense = Some(w_de * dense_v);
        bd.dice = Some(dice_v);
        bd.hausdorff = Some(haus_v);
        bd.total += w_de * dense_v;
        let g = dense_g * w_de;
        if out.s_pix.is_some() {
            grads.d_s_pix = Some(g);
        } else {
            grads.d_p_pix = Some(g);
        }
    }
    if bd.ce.is_none() && bd.dense.is_none() {
        return Err(Error::MissingBranch("any head"));
    }
    Ok((bd, grads))
}

/// Euclidean distance from every pixel to the nearest boundary pixel of the
/// mask, where a boundary pixel is a foreground pixel with a 4-neighbour of
/// background *inside* the grid (the grid edge does not count as background).
/// A mask with no boundary (empty or full) yields an all-zero map.
fn distance_to_boundary<S: Scalar>(mask: &Array2<u8>) -> Array2<S> {
    let (h, w) = mask.dim();
    let mut sq = Array2::from_elem((h, w), S::infinity());
    let mut any = false;
    for i in 0..h {
        for j in 0..w {
            if mask[[i, j]] != 1 {
                continue;
            }
            let edge = (i > 0 && mask[[i - 1, j]] == 0)
                || (i + 1 < h && mask[[i + 1, j]] == 0)
                || (j > 0 && mask[[i, j - 1]] == 0)
                || (j + 1 < w && mask[[i, j + 1]] == 0);
            if edge {
                sq[[i, j]] = S::zero();
                any = true;
            }
        }
    }
    if !any {
        return Array2::zeros((h, w));
    }
    // Separable squared-distance transform: 1-D passes along rows, then
    // columns of the row result.
    for mut row in sq.rows_mut() {
        let d = dt1d(row.as_slice().expect("contiguous row"));
        for (dst, src) in row.iter_mut().zip(d) {
            *dst = src;
        }
    }
    for j in 0..w {
        let col: Vec<S> = (0..h).map(|i| sq[[i, j]]).collect();
        let d = dt1d(&col);
        for (i, v) in d.into_iter().enumerate() {
            sq[[i, j]] = v;
        }
    }
    sq.mapv(|v| v.sqrt())
}

/// One-dimensional squared-distance transform (lower envelope of parabolas):
/// `out[q] = min_p ((q - p)^2 + f[p])`. Entries with infinite `f` contribute
/// no parabola; if every entry is infinite the output is all infinite.
fn dt1d<S: Scalar>(f: &[S]) -> Vec<S> {
    let n = f.len();
    let mut out = vec![S::infinity(); n];
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    let mut cut: Vec<S> = Vec::with_capacity(n);
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let qx = S::from_usize(q);
        let mut takeover;
        loop {
            match hull.last() {
                None => {
                    takeover = S::neg_infinity();
                    break;
                }
                Some(&p) => {
                    let px = S::from_usize(p);
                    takeover = ((f[q] + qx * qx) - (f[p] + px * px))
                        / (S::from_f64(2.0) * (qx - px));
                    if takeover <= *cut.last().expect("parallel to hull") {
                        hull.pop();
                        cut.pop();
                    } else {
                        break;
                    }
                }
            }
        }
        hull.push(q);
        cut.push(takeover);
    }
    if hull.is_empty() {
        return out;
    }
    let mut k = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        let x = S::from_usize(q);
        while k + 1 < hull.len() && cut[k + 1] < x {
            k += 1;
        }
        let dx = x - S::from_usize(hull[k]);
        *slot = dx * dx + f[hull[k]];
    }
    out
}
