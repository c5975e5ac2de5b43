use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value produced by `{op}`")]
    Numeric { op: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    Capacity(String),

    #[error("frame alignment mismatch: {0}")]
    Alignment(String),

    #[error("noise-type leakage between train and test: {0}")]
    Leakage(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("signal too short: {0}")]
    TooShort(String),

    #[error("training aborted at step {step} on utterance {utterance}: {reason}")]
    Diverged {
        step: usize,
        utterance: String,
        reason: String,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
