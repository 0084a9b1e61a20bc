use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// Every invalid field found while validating a configuration.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    InvalidConfig(Vec<String>),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("numeric fault: {0}")]
    NumericFault(String),

    #[error("client {client} hit a numeric fault in epoch {epoch}: {reason}")]
    ClientFault {
        client: usize,
        epoch: usize,
        reason: String,
    },

    #[error("degenerate embedding: norm {norm:e} is below {eps:e}")]
    DegenerateEmbedding { norm: f64, eps: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("data inconsistency: {0}")]
    DataConsistency(String),

    #[error("aggregation weights sum to zero")]
    DegenerateWeights,

    #[error("malformed file {path:?}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidConfig(_) | Error::Shape { .. } => 2,
            Error::NumericFault(_)
            | Error::ClientFault { .. }
            | Error::DegenerateEmbedding { .. } => 3,
            _ => 1,
        }
    }

    pub fn is_numeric_fault(&self) -> bool {
        self.exit_code() == 3
    }
}
