use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{layer}: dimension mismatch: {detail}")]
    Dimension { layer: String, detail: String },

    #[error("map generation failed after {retries} retries (seed {seed}, density {density})")]
    Generation {
        seed: u64,
        density: f64,
        retries: usize,
    },

    #[error("scene generation failed after {retries} retries (seed {seed}): free space below 20%")]
    SceneGeneration { seed: u64, retries: usize },

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("architecture fingerprint mismatch: expected {expected:016x}, found {found:016x}")]
    Fingerprint { expected: u64, found: u64 },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} (grad norm {grad_norm}, max |grad| {grad_max})"
    )]
    NonFinite {
        epoch: usize,
        batch: usize,
        grad_norm: f64,
        grad_max: f64,
    },

    #[error("{0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Dimension {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
