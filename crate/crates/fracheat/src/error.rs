//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("Mittag-Leffler evaluation did not converge (alpha={alpha}, beta={beta}, z={z})")]
    MlNonConvergence { alpha: f64, beta: f64, z: f64 },

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mode {mode}: Picard iteration is not contracting (update grew {grew} times in a row); check the splitting constant")]
    NonContraction { mode: usize, grew: usize },

    #[error("mode {mode}: tolerance not reached after {iterations} Picard iterations (last update {last_update:.3e})")]
    ToleranceNotReached {
        mode: usize,
        iterations: usize,
        last_update: f64,
    },

    #[error("inadmissible problem: {0}")]
    Inadmissible(String),

    #[error("degenerate denominator at node {node}: {value:.6e} below floor {floor:.6e}")]
    DegenerateDenominator { node: usize, value: f64, floor: f64 },

    #[error("inverse iteration hit the {iterations}-iteration limit (best residual {residual:.3e})")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach a mode label to per-mode solver failures.
    pub(crate) fn with_mode(self, mode: usize) -> Self {
        match self {
            Error::NonContraction { grew, .. } => Error::NonContraction { mode, grew },
            Error::ToleranceNotReached {
                iterations,
                last_update,
                ..
            } => Error::ToleranceNotReached {
                mode,
                iterations,
                last_update,
            },
            other => other,
        }
    }
}
