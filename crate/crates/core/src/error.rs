use std::path::Path;

use thiserror::Error;

use crate::llm::LlmError;
use crate::python::{LexError, SyntaxError};

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format: {0}")]
    Format(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("empty-repo: no parseable python files")]
    EmptyRepo,
    #[error("unknown symbol {0}")]
    UnknownSymbol(String),
    #[error("bad-candidate: {0}")]
    BadCandidate(String),
    #[error("duplicate example id {0}")]
    DuplicateExample(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("empty")]
    EmptyDataset,
    #[error("insufficient-samples: k={k} exceeds n={n}")]
    InsufficientSamples { n: usize, k: usize },
    #[error("requested {requested} examples from a dataset of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
