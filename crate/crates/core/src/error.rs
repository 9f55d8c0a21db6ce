use thiserror::Error;

/// Errors raised across the decoding engine and its analysis tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("fully masked row {row}")]
    FullyMaskedRow { row: usize },

    #[error("degenerate vector (zero norm)")]
    DegenerateVector,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid refresh schedule at group {group}, modality {modality}: {reason}")]
    Schedule {
        group: usize,
        modality: &'static str,
        reason: String,
    },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("engine state not initialized before step {step}")]
    Uninitialized { step: usize },

    #[error("cost cross-check failed: {0}")]
    CostMismatch(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
