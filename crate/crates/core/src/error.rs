use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing directory: {0}")]
    MissingDirectory(PathBuf),

    #[error("no keyword directories found under {0}")]
    NoKeywordDirectories(PathBuf),

    #[error("bad WAV file {id}: {reason}")]
    BadWav { id: String, reason: String },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid warp configuration: {0}")]
    WarpConfig(String),

    #[error("frequency {freq} Hz outside warp band [0, {f_m}]")]
    FrequencyOutOfRange { freq: f64, f_m: f64 },

    #[error("invalid filterbank: {0}")]
    Filterbank(String),

    #[error("signal of {samples} samples is shorter than one {window}-sample window")]
    SignalTooShort { samples: usize, window: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("config schema violation: {0}")]
    Schema(String),

    #[error("feature cache miss for {id} at alpha {alpha:.2}")]
    CacheMiss { id: String, alpha: f64 },

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("invalid score data: {0}")]
    Scores(String),

    #[error("statistics error: {0}")]
    Stats(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
