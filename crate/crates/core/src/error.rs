//! Crate-wide error type.
//!
//! Every fallible operation in the crate returns [`Result`]. Variants carry
//! enough coordinates (row, column, offending values) to locate the problem
//! in the input data without re-running validation by hand.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All errors produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Two matrices that must share a shape do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A matrix with zero rows or zero columns where data is required.
    #[error("matrix is empty")]
    EmptyMatrix,

    /// Lower endpoint above upper endpoint, or a NaN endpoint.
    #[error("cell ({row}, {col}): endpoints must satisfy lower <= upper and be non-NaN (lower={lower}, upper={upper})")]
    EndpointOrderViolation {
        row: usize,
        col: usize,
        lower: f64,
        upper: f64,
    },

    /// A point cell (equal endpoints) at an infinite value.
    #[error("cell ({row}, {col}): point cell requires a finite value")]
    InfinitePointCell { row: usize, col: usize },

    /// Noise standard deviation that is not strictly positive and finite.
    #[error("cell ({row}, {col}): sigma must be positive and finite (got {sigma})")]
    NonpositiveSigma { row: usize, col: usize, sigma: f64 },

    /// A single cell evaluation received inconsistent arguments.
    #[error("invalid cell: {0}")]
    InvalidCell(String),

    /// A data row whose log-likelihood is -inf at every support atom.
    #[error("row {row}: log-likelihood is -inf at every support atom")]
    DegenerateRow { row: usize },

    /// A row whose marginal probability underflows to zero under the prior.
    #[error("row {row}: marginal probability is zero under this prior")]
    ZeroMarginalRow { row: usize },

    /// A cell unbounded on both sides where a finite representative is needed.
    #[error("cell ({row}, {col}): unbounded on both sides; no finite representative")]
    UnboundedCell { row: usize, col: usize },

    /// A fill-in rule that cannot be applied to this cell.
    #[error("cell ({row}, {col}): rule {rule} requires a finite upper endpoint")]
    RuleInapplicable {
        row: usize,
        col: usize,
        rule: &'static str,
    },

    /// Tensor-product grids are only sensible in very low dimension.
    #[error("grid supports are limited to {max} dimensions (got {dim}); use exemplar or sampled supports instead")]
    DimensionTooHigh { dim: usize, max: usize },

    /// A column with no finite endpoint, so no support range can be inferred.
    #[error("column {col}: no finite endpoints; cannot infer a support range")]
    UnboundedColumn { col: usize },

    /// Malformed text input; coordinates are 1-based file positions.
    #[error("parse error at line {row}, field {col}: {msg}")]
    ParseError { row: usize, col: usize, msg: String },

    /// Invalid configuration value.
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    /// A metric was requested over an empty selection of cells.
    #[error("selection is empty; metric is undefined")]
    EmptySelection,

    /// Filesystem failure, tagged with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attach a path to an I/O error.
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
