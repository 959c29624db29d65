use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point outside the support: {0}")]
    OutOfSupport(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no conjugate update for prior {prior} with {observations} observations")]
    NonConjugatePair { prior: String, observations: String },
    #[error("basis {basis} is not compatible with family {family}")]
    IncompatibleBasis { family: String, basis: String },
    #[error("direction unavailable: {0}")]
    DirectionUnavailable(String),
    #[error("no valid Laplace approximation: {0}")]
    NoValidLaplace(String),
    #[error("mode search did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },
    #[error("parameters outside the validity region: {0}")]
    OutsideValidityRegion(String),
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("bridge is not invertible: {0}")]
    NonInvertibleBridge(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("k-means left cluster {0} empty on every attempt")]
    EmptyCluster(usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("negative rate {0}")]
    NegativeRate(f64),
    #[error("support mismatch: {0}")]
    SupportMismatch(String),
    #[error("degenerate rank-1 projection: 1'Σ1 = {0:e}")]
    DegenerateProjection(f64),
    #[error("data error: {0}")]
    Data(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
