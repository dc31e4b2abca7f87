use std::path::PathBuf;

/// Errors produced by field construction, I/O and the fusion solvers.
#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("domain error at pixel ({u}, {v}): {msg}")]
    Domain { u: usize, v: usize, msg: String },

    #[error("{msg}")]
    Degenerate { msg: String },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("solver did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("NaN detected at iteration {iteration}")]
    NumericalBreakdown { iteration: usize },

    #[error("malformed PFM in {path:?} at byte offset {offset}: {msg}")]
    PfmFormat {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, FusionError>;
