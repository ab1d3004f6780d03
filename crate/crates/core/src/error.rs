use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("basis of {size} states exceeds the configured capacity of {max}")]
    Capacity { size: usize, max: usize },

    #[error("channel index {index} out of range for {channels} channels")]
    ChannelOutOfRange { index: usize, channels: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("expected a unit vector, got norm {norm}")]
    NonUnit { norm: f64 },

    #[error("operator is not hermitian")]
    NotHermitian,

    #[error("no convergence after {iterations} iterations (best residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("shifted operator is not positive definite (lowest eigenvalue {lowest:e})")]
    IndefiniteShift { lowest: f64 },

    #[error("ground-state cluster is empty")]
    EmptyCluster,

    #[error("no collinear midpoint triples in table")]
    NoCollinearTriples,

    #[error("need ≥ {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
