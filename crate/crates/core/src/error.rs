//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimensions {width}x{height} not divisible by factor {factor}")]
    NotDivisible {
        width: usize,
        height: usize,
        factor: usize,
    },

    #[error("operation requires a fully valid raster but {count} pixels are masked")]
    MaskedInput { count: usize },

    #[error("raster is entirely masked")]
    AllMasked,

    #[error("source and target extents do not overlap")]
    NoOverlap,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing band role: {0}")]
    MissingBand(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("geotiff error: {0}")]
    GeoTiff(String),

    #[error("archive error: {0}")]
    Archive(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png error: {0}")]
    Png(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
