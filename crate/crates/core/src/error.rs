use std::path::PathBuf;

use thiserror::Error;

use crate::diffgraph::GraphError;
use crate::transport1d::TransportError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("diffgraph: {0}")]
    Graph(#[from] GraphError),
    #[error("transport1d: {0}")]
    Transport(#[from] TransportError),
    #[error("{module}: dimension mismatch: expected {expected}, got {got}")]
    Dimension {
        module: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{module}: {msg}")]
    Config { module: &'static str, msg: String },
    #[error("{module}: {msg}")]
    Numerical { module: &'static str, msg: String },
    #[error("data_io: {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("data_io: {0}")]
    Data(String),
    #[error("data_io: checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Broad failure category, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub(crate) fn config(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Config {
            module,
            msg: msg.into(),
        }
    }

    pub(crate) fn numerical(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Numerical {
            module,
            msg: msg.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } => ErrorKind::Usage,
            Error::Numerical { .. } => ErrorKind::Numerical,
            Error::Graph(GraphError::NonFinite { .. }) => ErrorKind::Numerical,
            Error::Transport(TransportError::NonFinite) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
