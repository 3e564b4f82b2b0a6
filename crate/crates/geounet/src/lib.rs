//! Polar-domain lumen segmentation for venous intravascular ultrasound.
//!
//! The crate resamples catheter frames into polar coordinates (rows = angle,
//! columns = radius), where a star-convex lumen becomes a single-valued
//! contour, and trains a dual-branch UNet on that representation: a contour
//! branch that classifies the per-angle boundary radius and a pixel branch
//! gated by the contour CDF. Everything runs on CPU with no external ML
//! runtime; a synthetic phantom generator provides reproducible training and
//! evaluation data.
//!
//! Numeric work is generic over [`Scalar`] (`f32` or `f64`); [`Real`] is the
//! default precision used by the CLI, and gradient checks run in `f64`.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default floating-point type for training and inference.
pub type Real = f32;

/// Cartesian frame in default precision.
pub type Frame = geometry::CartesianFrame<Real>;
/// Polar frame in default precision.
pub type Polar = geometry::PolarFrame<Real>;
/// Real-valued contour in default precision.
pub type Contour = geometry::SoftContour<Real>;
