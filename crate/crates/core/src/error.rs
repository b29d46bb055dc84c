use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("insufficient anchors: need at least {required} distinct anchors, got {got}")]
    InsufficientAnchors { required: usize, got: usize },
    #[error("anchor {0} is not part of the environment")]
    MissingAnchor(u32),
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("incompatible ordering: {0}")]
    IncompatibleOrdering(String),
    #[error("incompatible encoding: {0}")]
    IncompatibleEncoding(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index {index} out of range for table of {len} rows")]
    InvalidIndex { index: usize, len: usize },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
