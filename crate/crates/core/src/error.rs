use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the command line front end to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numeric,
    Divergence,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("degenerate embedding: {0} has zero norm")]
    DegenerateEmbedding(&'static str),
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("backward already ran on this tape; build a fresh tape before differentiating again")]
    BackwardAlreadyRun,
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("sequence of {len} tokens exceeds the limit of {limit}")]
    Length { len: usize, limit: usize },
    #[error("token id {id} is outside the vocabulary of size {vocab_size}")]
    UnknownToken { id: usize, vocab_size: usize },
    #[error("layout position {position} is outside hidden states with {rows} rows")]
    LayoutMismatch { position: usize, rows: usize },
    #[error("cannot fit a single document into a {limit}-token prompt (needs {needed})")]
    Unsatisfiable { needed: usize, limit: usize },
    #[error("data error: {0}")]
    Data(String),
    #[error("merge error on tensor `{name}`: {reason}")]
    Merge { name: String, reason: String },
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },
    #[error("parse error at {source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{}: {error}", path.display())]
    Io { path: PathBuf, error: std::io::Error },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::DegenerateEmbedding(_) | Error::NonFinite(_) => ErrorKind::Numeric,
            Error::Divergence { .. } => ErrorKind::Divergence,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, error: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            error,
        }
    }

    pub(crate) fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }
}
