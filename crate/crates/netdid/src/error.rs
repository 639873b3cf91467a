//! Crate-wide error type.
//!
//! Every fallible operation in the crate returns [`Result`]. Variants are
//! grouped by the stage that produces them (input validation, graph
//! construction, model fitting, estimation) so that callers such as the CLI
//! can map them onto exit codes without string matching.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by graph construction, data loading, model fitting, and
/// estimation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A node index referenced an endpoint outside `0..n`.
    #[error("node index {index} out of range for graph with {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },

    /// A per-node vector did not have one entry per graph node.
    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    /// The graph has no connected pair of distinct nodes, so the average
    /// path length is undefined.
    #[error("average path length undefined: no connected pair of distinct nodes")]
    NoConnectedPair,

    /// Malformed or inconsistent input data (CSV layout, header, field
    /// values, duplicate identifiers).
    #[error("invalid input: {0}")]
    InvalidData(String),

    /// A numeric field that must be finite was NaN or infinite.
    #[error("non-finite value in {what} at row {row}")]
    NonFinite { what: &'static str, row: usize },

    /// A configuration value is outside its documented range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A model fit was requested on an empty cell (for example an outcome
    /// regression on control units at an exposure level no control has).
    #[error("cannot fit {what}: cell d={d}, g={g} is empty")]
    EmptyCell { what: &'static str, d: u8, g: usize },

    /// An iterative solver failed to converge within its iteration budget.
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// A linear solve failed (singular or indefinite system).
    #[error("linear solve failed in {0}")]
    SingularSystem(&'static str),

    /// The trimmed analysis set is too small to aggregate or compute a
    /// variance.
    #[error("analysis set has {m} nodes after trimming, need at least {required}")]
    AnalysisSetTooSmall { m: usize, required: usize },

    /// An estimator leg has no mass: no unit carries positive weight.
    #[error("no units with positive weight in the {leg} leg at exposure level {level}")]
    EmptyLeg { leg: &'static str, level: usize },

    /// The requested exposure level is not in the exposure mapping's level
    /// set.
    #[error("exposure level {level} not in level set {levels:?}")]
    LevelNotInSupport { level: usize, levels: Vec<usize> },

    /// Probability tables in a discrete specification do not sum to one or
    /// contain negative entries.
    #[error("invalid discrete specification: {0}")]
    InvalidSpec(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// CSV parsing failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
