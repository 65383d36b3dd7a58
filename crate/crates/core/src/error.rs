use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification of failures, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Invalid configuration or parameters supplied by the caller.
    Config,
    /// Malformed, inconsistent, or numerically unusable data.
    Data,
    /// Inputs that could not be paired with each other.
    Pairing,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("token index {index} out of range for stream {stream} (K = {k}) at frame {frame}")]
    IndexOutOfRange {
        stream: usize,
        frame: usize,
        index: u32,
        k: usize,
    },

    #[error("parse error at row {row}, column {column:?}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("ragged row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("duplicate column {0:?}")]
    DuplicateColumn(String),

    #[error("missing column {0:?}")]
    MissingColumn(String),

    #[error("constant input{}: correlation is undefined", .0.as_deref().map(|c| format!(" in column {c:?}")).unwrap_or_default())]
    ConstantInput(Option<String>),

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("singular system: {0}")]
    Singular(String),

    #[error("unknown speaker {0}")]
    UnknownSpeaker(usize),

    #[error("unpaired inputs: {0}")]
    Unpaired(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) | Error::DuplicateColumn(_) | Error::MissingColumn(_) => {
                ErrorClass::Config
            }
            Error::Unpaired(_) => ErrorClass::Pairing,
            _ => ErrorClass::Data,
        }
    }
}
