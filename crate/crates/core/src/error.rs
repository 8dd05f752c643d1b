//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("satellite ({orbit},{slot}) out of range for {planes}x{per_plane} constellation")]
    SatOutOfRange {
        orbit: usize,
        slot: usize,
        planes: usize,
        per_plane: usize,
    },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("ring all-reduce needs at least 2 satellites, got {0}")]
    RingTooSmall(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("malformed flow graph: {0}")]
    MalformedGraph(String),
    #[error("transfer stalled: {0}")]
    Stall(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("constant estimation failed: {0}")]
    Estimation(String),
    #[error("stepsize {eta} exceeds the stepsize rule maximum {max}")]
    StepsizeTooLarge { eta: f64, max: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
