use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value produced by {0}")]
    NonFiniteResult(&'static str),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("operation requires a classification model")]
    NotClassification,

    #[error("client {0} has an empty training split")]
    EmptyDataset(usize),

    #[error("incompatible dataset schemas: {0}")]
    IncompatibleSchemas(String),

    #[error("empty population")]
    EmptyPopulation,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed frame: {0}")]
    MalformedFrame(String),

    #[error("truncated frame: need {needed} bytes, have {available}")]
    TruncatedFrame { needed: usize, available: usize },

    #[error("protocol version mismatch: expected {expected}, got {actual}")]
    VersionMismatch { expected: u16, actual: u16 },

    #[error("frame of {0} bytes exceeds the maximum frame length")]
    PayloadTooLarge(usize),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("client {0} disconnected")]
    ClientDisconnected(usize),

    #[error("data format error at line {line}: {message}")]
    DataFormat { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
