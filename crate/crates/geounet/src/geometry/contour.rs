//! Depth extraction and its inverse, contour binarization.
//!
//! A polar lumen mask of a star-convex region is a prefix of ones along each
//! row, so it is fully described by one number per angle: the depth, i.e. the
//! count of lumen bins along that radius. Binarization of a real-valued
//! contour position `d` marks every column left of or at the rounded
//! position, `j <= floor(d + 0.5)`, which always sets at least column 0.

use super::{ContourDepthMap, PolarGeom, PolarMask, SoftContour};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::Array2;

/// Sums each row of a polar mask into a per-angle depth count.
pub fn mask_to_contour_depth(mask: &PolarMask) -> ContourDepthMap {
    let depth: Vec<u32> = mask
        .pixels
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|&v| v as u32).sum())
        .collect();
    // Row sums of a validated binary mask cannot exceed the column count.
    ContourDepthMap::new(depth, mask.r()).expect("row sums bounded by R")
}

/// Binarizes a real-valued contour into a polar mask: row `i` is 1 at columns
/// `j <= floor(depth[i] + 0.5)` and 0 elsewhere. Depths must lie in
/// `[0, R - 0.5)` so the rounded position is a valid column.
pub fn contour_to_mask<S: Scalar>(contour: &SoftContour<S>, geom: PolarGeom) -> Result<PolarMask> {
    let r = geom.rows_per_turn;
    let mut pixels = Array2::<u8>::zeros((contour.len(), r));
    for (i, &d) in contour.depth.iter().enumerate() {
        let d = d.to_f64();
        if !d.is_finite() || d < 0.0 || d + 0.5 >= r as f64 {
            return Err(Error::DepthOutOfRange {
                angle: i,
                value: d,
                lo: 0.0,
                hi: r as f64 - 0.5,
            });
        }
        let last = (d + 0.5).floor() as usize;
        for j in 0..=last {
            pixels[[i, j]] = 1;
        }
    }
    PolarMask::new(pixels, geom)
}
