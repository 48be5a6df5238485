use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("action {action} is not available at state {state}")]
    Unavailable { state: usize, action: usize },

    #[error("no available action at state {0}")]
    NoAvailableAction(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("index {index} out of range (size {size})")]
    OutOfRange { index: usize, size: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("MDP failed validation: {0}")]
    Validation(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("policy is improper: {0}")]
    ImproperPolicy(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("chain is reducible: {0}")]
    Reducible(String),

    #[error("training aborted at step {step}: {reason}")]
    TrainingAbort { step: u64, reason: String },

    #[error("grid parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
