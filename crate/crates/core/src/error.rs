use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    InvalidConfig(Vec<String>),

    #[error("users {first} and {second} are too strongly correlated ({correlation:.4} > {limit})")]
    CoincidentUsers {
        first: usize,
        second: usize,
        correlation: f64,
        limit: f64,
    },

    #[error("constraint Gram matrix is numerically singular (condition number {condition:.3e})")]
    SingularConstraints { condition: f64 },

    #[error("covariance matrix is not Hermitian positive definite")]
    NotPositiveDefinite,

    #[error("weight vector is zero")]
    ZeroVector,

    #[error("no beta in the search bracket reaches correlation {rho}")]
    NoRoot { rho: f64 },

    #[error("partition produced no sectors")]
    EmptyGrid,

    #[error("location (psi = {psi_deg:.3} deg, r = {range:.4} m) is outside the coverage area")]
    OutOfCoverage { psi_deg: f64, range: f64 },

    #[error("no acceptable interferer placement after {retries} retries")]
    SamplingExhausted { retries: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("desired-user gain is zero")]
    ZeroDesiredGain,

    #[error("scenario has {got} users but the codebook was built for {expected}")]
    KMismatch { expected: usize, got: usize },

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("{path}: format version {found} is not supported (supported: {supported})")]
    IncompatibleVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("codebook is incomplete: no models for sectors {0:?}")]
    IncompleteCodebook(Vec<usize>),

    #[error("no sector with id {0}")]
    UnknownSector(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::CorruptFile {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(vec![msg.into()])
    }
}
