//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid group data: {0}")]
    InvalidGroup(String),

    #[error("operation requires an H-type group (no J-maps present)")]
    NotHType,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("characteristic point: horizontal gradient below threshold {threshold:e}")]
    CharacteristicPoint { threshold: f64 },

    #[error("solver abort at step {step}, t = {time}: non-finite value at node {node}")]
    SolverAbort { step: usize, time: f64, node: usize },

    #[error("modulus estimate infeasible: {0}")]
    ModulusInfeasible(String),

    #[error("barrier validation failed: {0}")]
    BarrierInvalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
