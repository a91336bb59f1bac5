use thiserror::Error;

/// Errors shared across the tensor, MPS, grid and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown leg `{0}`")]
    UnknownLeg(String),

    #[error("duplicate leg `{0}`")]
    DuplicateLeg(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid truncation: {0}")]
    InvalidTruncation(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("cannot normalize a zero-norm state")]
    ZeroNorm,

    #[error("zero-probability branch at site {site}: conditional {prob:.3e} below guard")]
    ZeroProbabilityBranch { site: usize, prob: f64 },

    #[error("basis matrix is not unitary (residual {0:.3e})")]
    NonUnitaryBasis(f64),

    #[error("dense oracle guard exceeded: {required} amplitudes > {limit}")]
    OracleTooLarge { required: u128, limit: u64 },

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
