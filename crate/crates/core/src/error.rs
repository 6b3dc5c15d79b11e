use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A Cholesky pivot was not strictly positive.
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// A linear predictor too large to draw a Poisson count from, or a
    /// factor entry that left the floating-point range.
    #[error("value {0} exceeds the overflow threshold")]
    Overflow(f64),

    #[error("{divergent} of {total} post-adaptation transitions diverged")]
    AllDivergent { divergent: usize, total: usize },

    #[error("no samples to summarize")]
    EmptyChain,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures caused by floating-point breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::Overflow(_) | Error::AllDivergent { .. }
        )
    }
}
