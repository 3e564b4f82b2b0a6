//! Whole-frame inference, with and without the wrap-padded continuity
//! enhancement.
//!
//! Plain mode converts the frame to polar, runs the network once, and
//! back-converts the predicted mask. The `plusplus` mode pads the polar input
//! with a quarter-turn of wrapped rows before the forward pass, slices a full
//! turn out of the padded outputs away from both borders, and rolls the rows
//! back so the result lines up with the original frame. Because the network
//! is fully convolutional over rows, the same trained weights serve both
//! modes; the padding only changes what the row-boundary zero padding can
//! corrupt.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, s};

use crate::error::{Error, Result};
use crate::geometry::{
    cartesian_mask_to_polar, cartesian_to_polar, mask_to_contour_depth, polar_mask_to_cartesian,
    resize_frame, resize_mask, roll_contour, roll_grid_rows, wrap_pad, CartesianFrame,
    CartesianMask, Interp, PolarGeom, SoftContour,
};
use crate::model::{
    predict_mask, ContourProbMap, ForwardOutput, Model, PixelProbMap, Representation,
};
use crate::scalar::Scalar;

/// Inference strategy: one plain forward pass, or the wrap-padded variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferMode {
    Plain,
    Plusplus,
}

impl fmt::Display for InferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InferMode::Plain => write!(f, "plain"),
            InferMode::Plusplus => write!(f, "plusplus"),
        }
    }
}

impl FromStr for InferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(InferMode::Plain),
            "plusplus" => Ok(InferMode::Plusplus),
            other => Err(Error::InvalidConfig(format!(
                "unknown inference mode '{other}' (expected plain or plusplus)"
            ))),
        }
    }
}

/// Rows of wrapped context prepended before the padded forward pass.
pub fn pad_rows_for(r: usize) -> usize {
    ((r as f64) / 4.0).round() as usize
}

/// First row of the full-turn slice taken out of the padded outputs.
pub fn slice_start_for(r: usize) -> usize {
    ((r as f64) / 12.0).round() as usize
}

/// Segments one Cartesian frame. Returns the predicted mask at the frame's
/// resolution plus the per-angle contour in polar radius bins (derived from
/// the predicted mask when the model has no contour branch).
pub fn infer<S: Scalar>(
    model: &Model<S>,
    frame: &CartesianFrame<S>,
    mode: InferMode,
) -> Result<(CartesianMask, SoftContour<S>)> {
    if model.cfg.representation == Representation::Cartesian {
        if mode == InferMode::Plusplus {
            return Err(Error::InvalidConfig(
                "wrap padding is angular; the plusplus mode needs a polar model".into(),
            ));
        }
        return infer_cartesian(model, frame);
    }
    let r = model.cfg.r;
    let polar = cartesian_to_polar(frame, r, Interp::Bilinear)?;
    let out = match mode {
        InferMode::Plain => model.forward(&polar)?.0,
        InferMode::Plusplus => {
            let padded = wrap_pad(&polar, pad_rows_for(r))?;
            let (padded_out, _) = model.forward(&padded)?;
            plusplus_outputs(&padded_out, r, pad_rows_for(r), slice_start_for(r))?
        }
    };
    let polar_mask = predict_mask(&out, polar.geom.clone())?;
    let mask = polar_mask_to_cartesian(&polar_mask, frame.side())?;
    let contour = match out.s_c {
        Some(s_c) => s_c,
        None => depth_contour(&polar_mask),
    };
    Ok((mask, contour))
}

/// Slices one full turn out of padded forward outputs and rolls the rows back
/// into the original orientation. `pad` is the number of wrapped rows that
/// were prepended and `start` the first padded-output row to keep; sliced row
/// `i` holds original row `(i + start - pad) mod R`, so rolling by
/// `pad - start` restores the original row order.
pub fn plusplus_outputs<S: Scalar>(
    padded: &ForwardOutput<S>,
    r: usize,
    pad: usize,
    start: usize,
) -> Result<ForwardOutput<S>> {
    let check = |rows: usize| -> Result<()> {
        if start + r > rows {
            return Err(Error::SliceOutOfBounds {
                start,
                len: r,
                rows,
            });
        }
        Ok(())
    };
    let shift = (pad as isize) - (start as isize);
    let take2 = |a: &Array2<S>| -> Result<Array2<S>> {
        check(a.nrows())?;
        Ok(roll_grid_rows(
            &a.slice(s![start..start + r, ..]).to_owned(),
            shift,
        ))
    };
    let take1 = |a: &Array1<S>| -> Result<Array1<S>> {
        check(a.len())?;
        let sliced = SoftContour::new(a.slice(s![start..start + r]).to_owned());
        Ok(roll_contour(&sliced, shift).depth)
    };
    Ok(ForwardOutput {
        p_c: match &padded.p_c {
            Some(p) => Some(ContourProbMap::new(take2(&p.probs)?)?),
            None => None,
        },
        s_c: match &padded.s_c {
            Some(s) => Some(SoftContour::new(take1(&s.depth)?)),
            None => None,
        },
        p_pix: match &padded.p_pix {
            Some(p) => Some(PixelProbMap::new(take2(&p.probs)?)?),
            None => None,
        },
        s_pix: match &padded.s_pix {
            Some(p) => Some(PixelProbMap::new(take2(&p.probs)?)?),
            None => None,
        },
    })
}

/// Seam-jump diagnostic: the absolute contour step across the wrap seam,
/// less the median absolute row-to-row step, floored at zero. A contour that
/// is no rougher at the seam than anywhere else scores 0.
pub fn discontinuity_score<S: Scalar>(s_c: &SoftContour<S>) -> S {
    let n = s_c.len();
    if n < 2 {
        return S::zero();
    }
    let seam = (s_c.depth[n - 1] - s_c.depth[0]).abs();
    let mut steps: Vec<S> = (0..n - 1)
        .map(|i| (s_c.depth[i + 1] - s_c.depth[i]).abs())
        .collect();
    steps.sort_by(|a, b| a.partial_cmp(b).expect("finite contour steps"));
    let median = if steps.len() % 2 == 1 {
        steps[steps.len() / 2]
    } else {
        (steps[steps.len() / 2 - 1] + steps[steps.len() / 2]) / S::from_f64(2.0)
    };
    (seam - median).max(S::zero())
}

/// Pixel-only Cartesian baseline path: resize to the model grid, threshold
/// the foreground probabilities, and resize the mask back.
fn infer_cartesian<S: Scalar>(
    model: &Model<S>,
    frame: &CartesianFrame<S>,
) -> Result<(CartesianMask, SoftContour<S>)> {
    let r = model.cfg.r;
    let small = resize_frame(frame, r)?;
    let (out, _) = model.forward_grid(&small.pixels)?;
    let probs = out
        .p_pix
        .as_ref()
        .ok_or(Error::MissingBranch("pixel"))?;
    let half = S::from_f64(0.5);
    let pixels = probs.probs.mapv(|p| u8::from(p >= half));
    let small_mask = CartesianMask::new(pixels, small.mm_per_pixel, small.center)?;
    let mask = resize_mask(&small_mask, frame.side())?;
    let polar = cartesian_mask_to_polar(&mask, r)?;
    Ok((mask, depth_contour(&polar)))
}

/// Real-valued contour read off a polar mask's row sums, in radius bins.
fn depth_contour<S: Scalar>(mask: &crate::geometry::PolarMask) -> SoftContour<S> {
    let depth = mask_to_contour_depth(mask);
    SoftContour::new(Array1::from_iter(
        depth.values().iter().map(|&d| S::from_usize(d as usize)),
    ))
}

/// Geometry of the polar grid a model would see for a given frame, exposed
/// for callers that need to reason about the sampling (e.g. metrics).
pub fn polar_geom_for<S: Scalar>(model: &Model<S>, frame: &CartesianFrame<S>) -> PolarGeom {
    PolarGeom {
        rows_per_turn: model.cfg.r,
        r_max_px: frame.side() as f64 / 2.0,
        theta0: 0.0,
        center: frame.center,
        mm_per_pixel: frame.mm_per_pixel,
    }
}
