use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("time index {k} out of range 0..={max}")]
    TimeIndex { k: usize, max: usize },
    #[error("invalid Laplacian: {0}")]
    Laplacian(String),
    #[error("invalid weight matrix {name}[{k}]: {reason}")]
    Weight {
        name: &'static str,
        k: usize,
        reason: String,
    },
    #[error("non-finite value produced by backward recursion at step {k}")]
    NonFinite { k: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("episode protocol violation: {0}")]
    Episode(String),
    #[error("refusing brute-force enumeration of {count} selection sequences (cap {cap})")]
    EnumerationCap { count: String, cap: u64 },
    #[error("training diverged: objective {j} exceeds guard {guard}")]
    Diverged { j: f64, guard: f64 },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
