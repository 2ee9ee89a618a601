use thiserror::Error;

/// Errors shared by all modules of the crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Parameters violate a type invariant (bad Hurst index, empty grid, …).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Evaluation outside the kernel domain (negative times).
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested operation is not defined for this covariance family.
    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),

    /// A conditioning pivot (or an asymptotic variance) fell below tolerance.
    #[error("degenerate conditioning: {0}")]
    DegenerateConditioning(String),

    /// Symmetric factorization failed even after the jitter ladder.
    #[error("factorization failure: {0}")]
    Factorization(String),

    /// Vector lies outside the numerical range of the quadratic form.
    #[error("out of space: {0}")]
    OutOfSpace(String),

    /// Exit-rate query with the start or end point on the wrong side of a barrier.
    #[error("invalid start: {0}")]
    InvalidStart(String),

    /// A numeric cross-check failed or a non-finite value was produced.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
