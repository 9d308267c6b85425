use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error at layer {layer}: expected {expected}, got {actual}")]
    Shape {
        layer: usize,
        expected: usize,
        actual: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid action {action} (expected < {n_actions})")]
    InvalidAction { action: usize, n_actions: usize },

    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("unknown identifier `{0}`")]
    UnknownIdent(String),

    #[error("expression size {size} exceeds max_size {max}")]
    ExprTooLarge { size: usize, max: usize },

    #[error("response format error: missing key `{0}`")]
    MissingKey(String),

    #[error("response format error: {0}")]
    Format(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("missing baseline for environments: {0:?}")]
    MissingBaseline(Vec<String>),

    #[error("statistics error: {0}")]
    Stats(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
