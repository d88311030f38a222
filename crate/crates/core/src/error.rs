use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh level {level} out of range (maximum {max})")]
    LevelOutOfRange { level: u32, max: u32 },

    #[error("non-finite value {value} at ({x}, {y})")]
    NonFinite { x: f64, y: f64, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("structure error: {0}")]
    Structure(String),

    #[error("{solver} did not converge in {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("{solver} diverged at iteration {iteration} (gamma {gamma:e})")]
    Divergence {
        solver: &'static str,
        iteration: usize,
        gamma: f64,
    },

    #[error("unknown case {0}; available: {1}")]
    UnknownCase(String, String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("too many constrained dofs for exhaustive search: {0} > 16")]
    TooLarge(usize),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for the errors a CLI should map to the non-convergence exit code.
    pub fn is_convergence_failure(&self) -> bool {
        matches!(self, Error::NonConvergence { .. } | Error::Divergence { .. })
    }
}
