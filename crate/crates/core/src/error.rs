use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = OodError> = std::result::Result<T, E>;

/// Broad failure class, used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum OodError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("unsupported kind code {0}")]
    UnsupportedKind(u8),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("invalid probability row {row}: {reason}")]
    InvalidProbability { row: usize, reason: String },

    #[error("label out of range: {label} at row {row} (n_classes = {n_classes})")]
    LabelOutOfRange {
        row: usize,
        label: i64,
        n_classes: usize,
    },

    #[error("negative label {label} at row {row}")]
    NegativeLabel { row: usize, label: i64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{what} dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("K exceeds training size: K = {k}, n_train = {n_train}")]
    KExceedsTrainingSize { k: usize, n_train: usize },

    #[error("zero-norm vector at row {0}")]
    ZeroNorm(usize),

    #[error("class {class} has {count} training examples; at least 2 are required")]
    ClassTooSmall { class: usize, count: usize },

    #[error("method {method} requires {what}")]
    MissingInput { method: String, what: &'static str },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{method} on {pair}: {source}")]
    InCell {
        method: String,
        pair: String,
        #[source]
        source: Box<OodError>,
    },
}

impl OodError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OodError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            OodError::Config(_) | OodError::MissingInput { .. } | OodError::InvalidParameter(_) => {
                ErrorKind::Config
            }
            OodError::Numerical(_) => ErrorKind::Numerical,
            OodError::InCell { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind().exit_code()
    }
}
