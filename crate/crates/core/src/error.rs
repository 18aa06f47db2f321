use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar or count argument lies outside the operation's domain.
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("input is not on the unit sphere (norm {norm})")]
    NotUnit { norm: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("jacobi iteration did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NotConverged { sweeps: usize, residual: f64 },

    #[error("kernel matrix is numerically singular (lambda_min = {lambda_min:e})")]
    NearSingular { lambda_min: f64 },

    #[error("negative eigenvalue {value:e} exceeds rounding tolerance {tolerance:e}")]
    NegativeEigenvalue { value: f64, tolerance: f64 },

    #[error("stopping-rule scan reached cap t = {cap} without a violation")]
    StoppingCapReached { cap: u64 },

    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NotUnit { .. } => "not_unit",
            Error::NotSymmetric { .. } => "not_symmetric",
            Error::NotConverged { .. } => "not_converged",
            Error::NearSingular { .. } => "near_singular",
            Error::NegativeEigenvalue { .. } => "negative_eigenvalue",
            Error::StoppingCapReached { .. } => "stopping_cap_reached",
            Error::ResourceCap(_) => "resource_cap",
            Error::Config(_) => "config",
            Error::Csv(_) => "csv",
            Error::Io { .. } => "io",
        }
    }
}
