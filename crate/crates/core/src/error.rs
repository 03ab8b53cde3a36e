//! Crate-wide error type.

/// Errors produced by assembly, setup and solve routines.
///
/// Numerical *non-convergence* of an outer solve is not an error — solvers
/// report it through their result structs so callers can inspect histories.
/// `Error` is reserved for conditions that leave no usable result: malformed
/// input, dimension mismatches, singular factorizations, divergence inside a
/// smoother loop.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input file or text payload.
    #[error("parse error: {0}")]
    Parse(String),

    /// Operands whose shapes do not line up, invalid block partitions, and
    /// other structural misuse.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A factorization or iteration broke down (singular block, NaN/Inf in a
    /// smoother sweep, indefinite operator in CG, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
