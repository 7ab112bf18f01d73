use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor operation produced NaN or an infinity.
    #[error("non-finite value produced at node `{node}`")]
    Numerical { node: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("schema error: {0}")]
    Schema(String),

    /// `row` is the 1-based data row (the header is not counted).
    #[error("cannot parse value {value:?} at row {row}, column `{column}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("split error: {0}")]
    Split(String),

    #[error("invalid action: {0}")]
    Action(String),

    #[error("replay buffer error: {0}")]
    Buffer(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
