use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data matrix [X; U] is rank deficient (rank {rank}, full row rank needs {required})")]
    RankDeficient { rank: usize, required: usize },

    #[error("unsupported disturbance model: {0}")]
    UnsupportedModel(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("closed loop is not Schur stable (spectral radius {0:.6})")]
    Unstable(f64),

    #[error("malformed problem: {0}")]
    Malformed(String),
}

impl Error {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible(_))
    }

    pub fn is_inconclusive(&self) -> bool {
        matches!(self, Error::Inconclusive(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
