use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{what} index {index} out of range (bound {bound})")]
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("utterance has no tokens")]
    EmptyUtterance,

    #[error("backward already ran on this tape; reset it before accumulating again")]
    DoubleBackward,

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("architecture error: {0}")]
    Architecture(String),

    #[error("state error: {0}")]
    State(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Training { epoch: usize, batch: usize, reason: String },

    #[error("parse error in {path}, line {line}: {reason}", path = .path.display())]
    Parse { path: PathBuf, line: usize, reason: String },

    #[error("label error: {0}")]
    Label(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("model format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used for process exit statuses and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Architecture(_) | Error::State(_) => ErrorKind::Usage,
            Error::Parse { .. }
            | Error::Label(_)
            | Error::Format(_)
            | Error::Version { .. }
            | Error::Io { .. }
            | Error::EmptyUtterance
            | Error::Index { .. } => ErrorKind::Data,
            Error::Dimension { .. } | Error::DoubleBackward | Error::Calibration(_) | Error::Training { .. } => {
                ErrorKind::Numerical
            }
        }
    }

    /// Process exit status: 1 usage/config, 2 data, 3 training/numerical.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }
}
