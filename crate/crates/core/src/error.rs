//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by model construction, estimation, selection, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A mass-probability vector does not lie on the simplex.
    #[error("invalid probability vector: {0}")]
    InvalidSimplex(String),

    /// A transition matrix is not row-stochastic.
    #[error("invalid stochastic matrix: {0}")]
    InvalidStochasticMatrix(String),

    /// Common variance below the admissible floor.
    #[error("variance {value} is below the floor {floor}")]
    NonpositiveVariance { value: f64, floor: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The transition matrix admits no unique stationary distribution
    /// (reducible or otherwise rank-deficient beyond tolerance).
    #[error("singular chain: no unique stationary distribution")]
    SingularChain,

    /// A latent-configuration enumeration exceeds its cap.
    #[error("enumeration of {required:.3e} configurations exceeds the cap {cap}")]
    EnumerationTooLarge { required: f64, cap: u64 },

    /// The exact-likelihood path was handed a matrix with missing cells.
    #[error("missing cells are not supported by the full-likelihood path")]
    MissingDataUnsupported,

    /// Row with no observed cells where at least one is required.
    #[error("row {0} has no observed cells")]
    EmptyRow(usize),

    /// Column with no observed cells where at least one is required.
    #[error("column {0} has no observed cells")]
    EmptyColumn(usize),

    /// Relative performance is undefined when all scores coincide.
    #[error("degenerate score range: fewer than two distinct finite values")]
    DegenerateRange,

    /// Normal scores are undefined for a row without rank variation.
    #[error("row {0} has no rank variation among its observed cells")]
    DegenerateRow(usize),

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("ragged rows: line {line} has {got} fields, expected {expected}")]
    RaggedRows {
        line: usize,
        got: usize,
        expected: usize,
    },

    #[error("matrix is empty")]
    EmptyMatrix,

    #[error("invalid scenario file: {0}")]
    ScenarioFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
