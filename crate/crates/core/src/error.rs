use thiserror::Error;

/// Errors raised by the route-planning library.
#[derive(Debug, Error)]
pub enum DarpError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("node {node} out of range for a network with {count} nodes")]
    NodeOutOfRange { node: usize, count: usize },
    #[error("edge length must be positive, got {0}")]
    NonPositiveLength(f64),
    #[error("pedestrian count must be non-negative, got {0}")]
    NegativeFlow(f64),
    #[error("series too short: need at least {needed} values, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("degenerate series: {0}")]
    DegenerateSeries(String),
    #[error("invalid configuration: {field}: {message}")]
    InvalidConfig { field: String, message: String },
    #[error("action {action:?} leaves the grid at ({x}, {y})")]
    InvalidAction { action: crate::grid::Action, x: usize, y: usize },
    #[error("no valid actions available")]
    NoValidActions,
    #[error("replay buffer holds {size} experiences, {requested} requested")]
    Underfilled { size: usize, requested: usize },
    #[error("replay index {0} is not occupied")]
    InvalidIndex(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("shape mismatch: expected {expected} parameters, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("checkpoint parse error: {0}")]
    Checkpoint(String),
    #[error("destination unreachable from node {0}")]
    Unreachable(usize),
    #[error("state space of {0} states exceeds the tabular limit")]
    TooManyStates(usize),
    #[error("the episode has already ended")]
    EpisodeOver,
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DarpError> = std::result::Result<T, E>;

pub(crate) fn invalid(field: &str, message: impl Into<String>) -> DarpError {
    DarpError::InvalidConfig {
        field: field.to_string(),
        message: message.into(),
    }
}
