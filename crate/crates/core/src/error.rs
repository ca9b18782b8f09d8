use thiserror::Error;

/// Errors raised by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate {value} is outside the kernel domain [0, 1]")]
    Domain { value: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("solver diverged at sweep {sweep}: objective is {objective}")]
    Diverged { sweep: usize, objective: f64 },

    #[error("solver stopped after {sweeps} sweeps with KKT residual {kkt_residual:.3e}")]
    NotConverged {
        sweeps: usize,
        kkt_residual: f64,
        solution: Box<crate::solver::MklSolution>,
    },

    #[error("block update failed: {0}")]
    BlockUpdate(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        name,
        reason: reason.into(),
    }
}
