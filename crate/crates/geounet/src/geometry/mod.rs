//! Coordinate systems and mask/contour conversions.
//!
//! Images live in one of two grids:
//!
//! * **Cartesian**: the scanner frame, a square `H x H` grid with the catheter
//!   at `center` (row, col) and a `mm_per_pixel` calibration.
//! * **Polar**: an `R x R` resampling about the catheter where row `i` is the
//!   angle `theta0 + 2*pi*i/R` and column `j` is the radius
//!   `r_max_px * (j + 0.5) / R` in Cartesian pixels. Radii sit at bin centers
//!   so no column degenerates to the single point `r = 0`.
//!
//! The angle is measured from the +row axis toward the +col axis, fixed once
//! here and recorded in [`PolarGeom`]; every conversion in the crate uses the
//! same convention. Wrap-padded polar frames have more than `rows_per_turn`
//! rows; `rows_per_turn` always counts the bins of one full turn.

mod components;
mod contour;
mod io;
pub(crate) mod resample;
mod wrap;

pub use components::{label_components, largest_component, largest_component_grid};
pub use contour::{contour_to_mask, mask_to_contour_depth};
pub use io::{
    load_frame_png, load_mask_png, save_frame_png, save_mask_png, SidecarMeta, DEFAULT_FOV_MM,
};
pub use resample::{
    cartesian_mask_to_polar, cartesian_to_polar, polar_mask_to_cartesian, polar_to_cartesian,
    resize_frame, resize_mask, Interp,
};
pub use wrap::{roll_contour, roll_grid_rows, roll_rows, slice_middle, wrap_pad};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Square grayscale image in scanner coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianFrame<S> {
    /// Intensities in `[0, 1]`, indexed `(row, col)`.
    pub pixels: Array2<S>,
    /// Physical calibration, mm per pixel side.
    pub mm_per_pixel: f64,
    /// Catheter center as a fractional `(row, col)` position.
    pub center: (f64, f64),
}

impl<S: Scalar> CartesianFrame<S> {
    /// Builds a frame, checking squareness, finiteness, and that the center
    /// lies inside the grid.
    pub fn new(pixels: Array2<S>, mm_per_pixel: f64, center: (f64, f64)) -> Result<Self> {
        let (rows, cols) = pixels.dim();
        if rows != cols {
            return Err(Error::NonSquareFrame { rows, cols });
        }
        if !(mm_per_pixel > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "mm_per_pixel must be positive, got {mm_per_pixel}"
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("CartesianFrame pixels".into()));
        }
        let max = (rows.max(1) - 1) as f64;
        if !(center.0 >= 0.0 && center.0 <= max && center.1 >= 0.0 && center.1 <= max) {
            return Err(Error::InvalidConfig(format!(
                "center {center:?} outside a {rows}x{cols} grid"
            )));
        }
        Ok(Self {
            pixels,
            mm_per_pixel,
            center,
        })
    }

    /// Side length in pixels.
    pub fn side(&self) -> usize {
        self.pixels.nrows()
    }
}

/// Binary mask in scanner coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianMask {
    /// Values in `{0, 1}`, indexed `(row, col)`.
    pub pixels: Array2<u8>,
    pub mm_per_pixel: f64,
    pub center: (f64, f64),
}

impl CartesianMask {
    /// Builds a mask, rejecting values other than 0 and 1.
    pub fn new(pixels: Array2<u8>, mm_per_pixel: f64, center: (f64, f64)) -> Result<Self> {
        validate_binary(&pixels)?;
        Ok(Self {
            pixels,
            mm_per_pixel,
            center,
        })
    }

    pub fn side(&self) -> usize {
        self.pixels.nrows()
    }

    /// Foreground area in pixels.
    pub fn area(&self) -> usize {
        self.pixels.iter().filter(|&&v| v == 1).count()
    }
}

/// Geometric metadata shared by polar frames and masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarGeom {
    /// Angle bins per full turn (the `R` of the representation).
    pub rows_per_turn: usize,
    /// Cartesian radius in pixels covered by the outermost column.
    pub r_max_px: f64,
    /// Angle of row 0 in radians.
    pub theta0: f64,
    /// Catheter center in the source Cartesian frame, `(row, col)`.
    pub center: (f64, f64),
    pub mm_per_pixel: f64,
}

impl PolarGeom {
    /// Angle of row `i`.
    pub fn theta(&self, row: usize) -> f64 {
        self.theta0 + TAU * row as f64 / self.rows_per_turn as f64
    }

    /// Cartesian radius of column `j` in pixels.
    pub fn radius(&self, col: usize) -> f64 {
        self.r_max_px * (col as f64 + 0.5) / self.rows_per_turn as f64
    }
}

/// Real-valued grid in polar coordinates (rows = angle, cols = radius).
#[derive(Debug, Clone, PartialEq)]
pub struct PolarFrame<S> {
    /// `n_rows x R`; `n_rows == R` unless wrap-padded.
    pub pixels: Array2<S>,
    pub geom: PolarGeom,
}

impl<S: Scalar> PolarFrame<S> {
    pub fn new(pixels: Array2<S>, geom: PolarGeom) -> Result<Self> {
        if pixels.ncols() != geom.rows_per_turn {
            return Err(Error::ShapeMismatch {
                expected: format!("{} radius columns", geom.rows_per_turn),
                got: format!("{}", pixels.ncols()),
            });
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("PolarFrame pixels".into()));
        }
        Ok(Self { pixels, geom })
    }

    /// Angle bins per turn.
    pub fn r(&self) -> usize {
        self.geom.rows_per_turn
    }

    pub fn n_rows(&self) -> usize {
        self.pixels.nrows()
    }
}

/// Binary grid in polar coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarMask {
    /// `n_rows x R`, values in `{0, 1}`.
    pub pixels: Array2<u8>,
    pub geom: PolarGeom,
}

impl PolarMask {
    pub fn new(pixels: Array2<u8>, geom: PolarGeom) -> Result<Self> {
        if pixels.ncols() != geom.rows_per_turn {
            return Err(Error::ShapeMismatch {
                expected: format!("{} radius columns", geom.rows_per_turn),
                got: format!("{}", pixels.ncols()),
            });
        }
        validate_binary(&pixels)?;
        Ok(Self { pixels, geom })
    }

    pub fn r(&self) -> usize {
        self.geom.rows_per_turn
    }
}

/// Per-angle lumen depth as an integer pixel count, entries in `{0, ..., R}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContourDepthMap {
    depth: Vec<u32>,
    r: usize,
}

impl ContourDepthMap {
    pub fn new(depth: Vec<u32>, r: usize) -> Result<Self> {
        if let Some((angle, &value)) = depth.iter().enumerate().find(|(_, &d)| d > r as u32) {
            return Err(Error::DepthOutOfRange {
                angle,
                value: value as f64,
                lo: 0.0,
                hi: r as f64,
            });
        }
        Ok(Self { depth, r })
    }

    pub fn depths(&self) -> &[u32] {
        &self.depth
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    /// Maximum representable depth (`R`, the full radial extent).
    pub fn r(&self) -> usize {
        self.r
    }

    /// Raw per-angle depths, in `[0, R]`.
    pub fn values(&self) -> &[u32] {
        &self.depth
    }

    /// Depths clipped to the class range `[0, R-1]`, plus how many entries
    /// were clipped. Rows whose lumen fills the whole radius have depth `R`
    /// but the contour head only has classes `0..R`, so supervision targets
    /// are clamped to the last class.
    pub fn class_targets(&self) -> (Vec<u32>, usize) {
        let hi = self.r.saturating_sub(1) as u32;
        let clipped = self.depth.iter().filter(|&&d| d > hi).count();
        (self.depth.iter().map(|&d| d.min(hi)).collect(), clipped)
    }
}

/// Real-valued per-angle boundary position in radius-column units.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftContour<S> {
    pub depth: Array1<S>,
}

impl<S: Scalar> SoftContour<S> {
    pub fn new(depth: Array1<S>) -> Self {
        Self { depth }
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }
}

fn validate_binary(pixels: &Array2<u8>) -> Result<()> {
    for ((row, col), &v) in pixels.indexed_iter() {
        if v > 1 {
            return Err(Error::NonBinaryMask {
                value: v as f64,
                row,
                col,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cartesian_frame_rejects_non_square() {
        let err = CartesianFrame::new(Array2::<f32>::zeros((4, 6)), 0.1, (1.0, 1.0));
        assert!(matches!(err, Err(Error::NonSquareFrame { rows: 4, cols: 6 })));
    }

    #[test]
    fn cartesian_frame_rejects_center_outside() {
        let err = CartesianFrame::new(Array2::<f32>::zeros((4, 4)), 0.1, (5.0, 1.0));
        assert!(err.is_err());
    }

    #[test]
    fn mask_rejects_non_binary() {
        let err = CartesianMask::new(array![[0u8, 2u8], [0u8, 0u8]], 0.1, (0.5, 0.5));
        assert!(matches!(
            err,
            Err(Error::NonBinaryMask { value, row: 0, col: 1 }) if value == 2.0
        ));
    }

    #[test]
    fn depth_map_rejects_over_r() {
        let err = ContourDepthMap::new(vec![0, 4, 5], 4);
        assert!(matches!(err, Err(Error::DepthOutOfRange { angle: 2, .. })));
    }

    #[test]
    fn class_targets_clip_full_depth_rows() {
        let map = ContourDepthMap::new(vec![0, 3, 4, 4], 4).unwrap();
        let (targets, clipped) = map.class_targets();
        assert_eq!(targets, vec![0, 3, 3, 3]);
        assert_eq!(clipped, 2);
    }

    #[test]
    fn polar_geom_bin_centers() {
        let geom = PolarGeom {
            rows_per_turn: 256,
            r_max_px: 128.0,
            theta0: 0.0,
            center: (127.5, 127.5),
            mm_per_pixel: 70.0 / 256.0,
        };
        assert!((geom.radius(0) - 0.25).abs() < 1e-12);
        assert!((geom.radius(255) - 127.75).abs() < 1e-12);
        assert!((geom.theta(64) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }
}
