use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("path delay of {delay} samples exceeds the cyclic prefix of {l_cp} samples")]
    DelayExceedsPrefix { delay: usize, l_cp: usize },

    #[error("delay of {delay} samples is outside [0, {max}]")]
    DelayOutOfRange { delay: usize, max: usize },

    #[error("allocation failed: {0}")]
    Allocation(String),

    #[error("payload of {len} symbols exceeds region capacity of {capacity}")]
    Overflow { len: usize, capacity: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("reference vector has zero norm")]
    ZeroNorm,

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
