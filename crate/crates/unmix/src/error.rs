//! Error vocabulary shared by every module of the crate.

/// Unified error type.
///
/// Numeric routines are total functions on valid inputs; every failure mode is
/// either a rejected argument, a structural impossibility (non-PD matrix,
/// undefined correlation), or a runtime breakdown (non-finite values,
/// divergence).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument value is outside the accepted domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Array shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A Cholesky pivot was non-positive: the matrix is not positive definite
    /// (usually a sign that the jitter is too small for the length-scale).
    #[error("matrix not positive definite: pivot {index} is {value:e}")]
    NotPositiveDefinite {
        /// Zero-based row at which factorization failed.
        index: usize,
        /// The offending pivot value (≤ 0).
        value: f64,
    },

    /// A computation produced a non-finite intermediate where one is not
    /// allowed.
    #[error("numerical instability: {0}")]
    NumericalInstability(String),

    /// Training produced a non-finite loss or gradient. Any history recorded
    /// before this epoch remains valid.
    #[error("training diverged at epoch {epoch}: {reason}")]
    TrainingDiverged {
        /// Epoch (1-based) at which the non-finite value appeared.
        epoch: usize,
        /// Which quantity went non-finite.
        reason: String,
    },

    /// Pearson correlation is undefined (a constant input vector).
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// The requested problem size is outside the supported range.
    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    /// Reading or writing an external file failed.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A file had the right extension but the wrong contents.
    #[error("parse error: {0}")]
    Parse(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
