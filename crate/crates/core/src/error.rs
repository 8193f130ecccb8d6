use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {context} (expected {expected}, got {actual})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix is not positive definite (non-positive pivot at index {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("numerical failure: {what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate subspace: data has zero variance")]
    DegenerateSubspace,

    #[error("zero-norm embedding at sample {index}; cosine similarity is undefined")]
    ZeroNormEmbedding { index: usize },

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("index {index} out of range (valid: 1..={max})")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("shift area too small: {count} layer(s) selected, need at least 2")]
    AreaTooSmall { count: usize },

    #[error("hook contract violated: {0}")]
    HookContract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt container at byte {offset}: {detail}")]
    Corruption { offset: u64, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("layer {layer}: {source}")]
    AtLayer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn at_layer(self, layer: usize) -> Self {
        Error::AtLayer {
            layer,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad configuration rather than a failed computation.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::AreaTooSmall { .. } => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
