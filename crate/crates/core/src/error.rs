use thiserror::Error;

/// Errors raised by the toolkit.
///
/// Variants split into precondition violations (bad input) and numerical
/// failures; [`Error::is_numerical`] tells them apart so front ends can map
/// them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vector length {0} is not a perfect square")]
    BadLength(usize),

    #[error("matrix is not square: {0}x{1}")]
    NotSquare(usize, usize),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("trace is {0}, expected 1")]
    InvalidTrace(f64),

    #[error("not positive semidefinite: eigenvalue {min_eigenvalue:e} (element {index})")]
    NotPsd { index: usize, min_eigenvalue: f64 },

    #[error("rank {rank} exceeds rank hint {hint}")]
    RankHintViolated { rank: usize, hint: usize },

    #[error("effects do not sum to the identity (deviation norm {deviation_norm:e})")]
    IncompletePovm {
        deviation_norm: f64,
        deviation: Box<crate::herm::HermitianMatrix>,
    },

    #[error("matrix is not unitary (deviation {0:e})")]
    NonUnitary(f64),

    #[error("Kraus operators violate the completeness relation (deviation {0:e})")]
    KrausIncomplete(f64),

    #[error("channel validity check failed: {0}")]
    InvalidChannel(String),

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero eigenvalue at position {0} in a product formula")]
    ZeroEigenvalue(usize),

    #[error("scheme matrix is rank deficient ({rank} < {target}); reconstruction is ill-posed")]
    IllPosed { rank: usize, target: usize },

    #[error("negative probability {0:e}")]
    NegativeProbability(f64),

    #[error("eigensolver did not converge")]
    EigenNonConvergence,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EigenNonConvergence | Error::Numerical(_) | Error::InvalidChannel(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
