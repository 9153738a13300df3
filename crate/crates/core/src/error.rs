use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid scalar channel at index {index}: {reason}")]
    InvalidChannel { index: usize, reason: String },

    #[error("degenerate matrix: column {column} is identically zero")]
    DegenerateMatrix { column: usize },

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("empty neighbor set for index {0}")]
    EmptyNeighborhood(usize),

    #[error("zero reference signal; trial excluded from NMSE")]
    ZeroSignal,

    #[error("block placement infeasible: K + L - 1 = {needed} exceeds N = {n}")]
    InfeasiblePlacement { needed: usize, n: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}
