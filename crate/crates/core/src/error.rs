use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("band index {band} out of range for image with {bands} bands")]
    BandOutOfRange { band: usize, bands: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("image {height}x{width} is not divisible by factor {k}; crop to a multiple of {k} first")]
    NotDivisible { height: usize, width: usize, k: usize },

    #[error("raster decode error: {0}")]
    Decode(String),

    #[error("truncated raster payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("non-finite sample at index {0}")]
    NonFinite(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("stepsize undefined for primal slot {slot}: no incident edge with positive norm bound")]
    UndefinedStepsize { slot: String },

    #[error("non-finite iterate in slot {slot} at iteration {iteration}")]
    NonFiniteIterate { slot: String, iteration: usize },

    #[error("solver diverged at iteration {iteration} (slot {slot}, relative change {change:e})")]
    Diverged {
        slot: String,
        iteration: usize,
        change: f64,
    },

    #[error("correlation undefined: input has zero variance")]
    ZeroVariance,

    #[error("image {height}x{width} smaller than SSIM window {window}")]
    WindowTooLarge {
        height: usize,
        width: usize,
        window: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png export: {0}")]
    Png(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
