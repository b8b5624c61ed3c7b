use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("task generation failed after {attempts} attempts: {reason}")]
    Generation { attempts: usize, reason: String },

    #[error("sequence of {len} tokens exceeds the context limit of {limit}")]
    ContextOverflow { len: usize, limit: usize },

    #[error("trace has no steps")]
    EmptyTrace,

    #[error("malformed trace: {0}")]
    Malformed(String),

    #[error("unknown token id {0}")]
    UnknownToken(u32),

    #[error("no edit possible: {0}")]
    NoEditPossible(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("precondition not met: {0}")]
    Precondition(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
