use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not skew-symmetric: |A + A^T| = {asymmetry:.3e}")]
    NotSkewSymmetric { asymmetry: f64 },

    #[error("rotation angle too close to pi for a unique logarithm (trace = {trace})")]
    NearPiRotation { trace: f64 },

    #[error("matrix is singular or orientation-reversing (det = {det:.3e})")]
    SingularMatrix { det: f64 },

    #[error("grid has {n_nodes} nodes, stencil needs at least {required}")]
    GridTooSmall { n_nodes: usize, required: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid rod parameters: {0}")]
    InvalidParams(String),

    #[error("invalid gain profile at node {node}: {reason}")]
    InvalidGains { node: usize, reason: String },

    #[error("invalid integrator configuration: {0}")]
    InvalidIntegrator(String),

    #[error("field length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {what} at node {node}")]
    NonFiniteState { what: &'static str, node: usize },

    #[error("covariance diverged: diagonal entry {value:.3e} exceeds cap {cap:.3e}")]
    CovarianceBlowup { value: f64, cap: f64 },

    #[error("covariance lost positive semidefiniteness: smallest eigenvalue {min_eigenvalue:.3e}")]
    CovarianceIndefinite { min_eigenvalue: f64 },

    #[error("invalid noise model: {0}")]
    InvalidNoise(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("config error at line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("invalid value for `{key}`: {reason}")]
    ConfigValue { key: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for the failures that mean the simulation itself diverged.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteState { .. }
                | Error::CovarianceBlowup { .. }
                | Error::CovarianceIndefinite { .. }
        )
    }
}
