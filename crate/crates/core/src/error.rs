use thiserror::Error;

/// Errors produced by the nucleo pipeline.
#[derive(Debug, Error)]
pub enum NucleoError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("cut selection problem is infeasible: mutex pair {pair} is split by no candidate cut")]
    Infeasible { pair: usize },

    #[error("cut selection capacity exceeded: {cuts} candidate cuts (limit {limit})")]
    Capacity { cuts: usize, limit: usize },

    #[error("unrecognized model format")]
    UnrecognizedFormat,

    #[error("unsupported model version {0}")]
    UnsupportedVersion(u32),

    #[error("model file is corrupt: {0}")]
    CorruptModel(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = NucleoError> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NucleoError::Dimension(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(NucleoError::InvalidInput(msg.into()))
}
