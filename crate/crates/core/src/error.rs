use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Capacity exponent too small for the eigenvalue trace to converge.
    #[error("divergent trace: capacity exponent alpha = {alpha} must exceed 1")]
    DivergentTrace { alpha: f64 },

    #[error("empty spectrum")]
    EmptySpectrum,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("fixed-point solver failed: {message} ({diagnostics})")]
    Solver { message: String, diagnostics: String },

    #[error("infeasible ridgeless threshold {threshold}: spectrum has only {rank} nonzero modes")]
    Infeasible { threshold: f64, rank: usize },

    #[error("risk estimate unstable (gamma1 = {gamma1}, gamma2 = {gamma2}); outside the validity region")]
    Instability { gamma1: f64, gamma2: f64 },

    #[error("regime error: {0}")]
    Regime(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
