//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by geometry, model, training, and I/O operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("frame must be square, got {rows}x{cols}")]
    NonSquareFrame { rows: usize, cols: usize },

    #[error("invalid angular resolution R={r}: {reason}")]
    InvalidResolution { r: usize, reason: String },

    #[error("mask contains non-binary value {value} at ({row}, {col})")]
    NonBinaryMask { value: f64, row: usize, col: usize },

    #[error("contour depth {value} at angle index {angle} outside [{lo}, {hi}]")]
    DepthOutOfRange {
        angle: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("pad_rows={pad_rows} outside (0, {max}]")]
    PadRowsOutOfRange { pad_rows: usize, max: usize },

    #[error("slice [{start}, {start}+{len}) exceeds {rows} rows")]
    SliceOutOfBounds {
        start: usize,
        len: usize,
        rows: usize,
    },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("phantom contour radius {radius:.3} px non-positive at theta={theta:.4} rad")]
    DegenerateContour { theta: f64, radius: f64 },

    #[error("phantom spec violates invariants: {0}")]
    InvalidPhantomSpec(String),

    #[error("mask is empty: no lumen")]
    EmptyMask,

    #[error("forward output is missing the {0} branch")]
    MissingBranch(&'static str),

    #[error("augmentation failed: {0}")]
    Augment(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training aborted: non-finite loss at iteration {iter} on batch {batch_ids:?}")]
    NonFiniteLoss { iter: usize, batch_ids: Vec<String> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
