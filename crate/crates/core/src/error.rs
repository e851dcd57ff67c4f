use std::fmt;

/// Errors produced anywhere in the reconstruction toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid architecture: {0}")]
    InvalidSpec(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("malformed file at byte offset {offset}: {reason}")]
    MalformedFile { offset: u64, reason: String },

    #[error("unsupported magic number {0:#010x}")]
    UnsupportedMagic(u32),

    #[error("population too small: need at least 2 members, got {0}")]
    PopulationTooSmall(usize),

    #[error("non-finite values produced during {0}")]
    NonFinite(String),

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("column {column} of layer {layer} has (near) zero norm")]
    ZeroColumn { layer: usize, column: usize },

    #[error("architecture mismatch: {0}")]
    SpecMismatch(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(what: impl fmt::Display) -> Error {
    Error::ShapeMismatch(what.to_string())
}
