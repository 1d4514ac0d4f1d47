use std::path::PathBuf;

/// Errors reported by the solver library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value {value} at node {node:?}")]
    NonFinite { node: Vec<usize>, value: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("quadrature did not converge for xi = {xi:?}, zeta = {zeta:?} (error estimate {estimate:.3e})")]
    Quadrature { xi: Vec<f64>, zeta: Vec<f64>, estimate: f64 },

    #[error("weight table needs {needed} bytes but the budget is {budget}; use reduced storage or a smaller grid")]
    MemoryBudget { needed: usize, budget: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("solution blew up at t = {t}")]
    BlowUp { t: f64 },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
