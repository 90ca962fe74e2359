//! Error types shared across the pipeline.

use thiserror::Error;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("training failure: {0}")]
    TrainingFailure(String),

    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    ShapeMismatch {
        expected: String,
        got: String,
        context: String,
    },

    #[error("checkpoint has bad magic bytes")]
    BadMagic,

    #[error("checkpoint version {0} not supported")]
    UnsupportedVersion(u16),

    #[error("checkpoint file truncated")]
    Truncated,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("classifier never changed its prediction over the trajectory")]
    NoPredictionChange {
        /// Class ids observed at each step, latest timestep first.
        trace: Vec<usize>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("wav error: {0}")]
    Wav(String),
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        Error::Wav(e.to_string())
    }
}
