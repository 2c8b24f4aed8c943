use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("negative off-diagonal rate at ({0}, {1})")]
    NegativeOffDiagonal(usize, usize),

    #[error("row {0} sums to {1}, outside tolerance")]
    RowSumViolation(usize, f64),

    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("eigenvector basis is ill-conditioned (condition estimate {0:e})")]
    IllConditionedBasis(f64),

    #[error("eigendecomposition failed to converge")]
    NoConvergence,

    #[error("eigenvalue with positive real part {0:e}")]
    PositiveEigenvalue(f64),

    #[error("spectrum is identically zero")]
    AllZeroSpectrum,

    #[error("corrected approximation requires a generalized inverse")]
    MissingGeneralizedInverse,

    #[error("generalized-inverse hypothesis violated: {0}")]
    HypothesisViolation(&'static str),

    #[error("spectral band hypothesis violated: {0}")]
    MuHypothesisViolation(String),

    #[error("transition probability {prob:e} for pair {index} is not positive")]
    ZeroProbabilityTransition { index: usize, prob: f64 },

    #[error("likelihood is zero")]
    ZeroLikelihood,

    #[error("parse error at {position}: expected {expected}")]
    Parse { position: usize, expected: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("series has no variation")]
    DegenerateSeries,

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
