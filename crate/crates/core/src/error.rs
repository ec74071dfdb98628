use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("duplicate id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },

    #[error("record {id:?} violates invariant: {message}")]
    InvalidRecord { id: String, message: String },

    #[error("record {id:?} is missing {what}")]
    MissingField { id: String, what: &'static str },

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("wav decode error: {0}")]
    Wav(String),

    #[error("signal is entirely below the silence threshold")]
    AllSilent,

    #[error("signal too short: {0}")]
    TooShort(String),

    #[error("all gating blocks fell below the loudness gates")]
    Silence,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero-norm embedding row {0}")]
    ZeroNormRow(usize),

    #[error("degenerate batch: no anchor has a positive pair")]
    DegenerateBatch,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite gradient at coordinate {0}")]
    NonFiniteGradient(usize),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedLine { .. } => "malformed-line",
            Error::DuplicateId { .. } => "duplicate-id",
            Error::InvalidRecord { .. } => "invalid-record",
            Error::MissingField { .. } => "missing-field",
            Error::UnsupportedFormat(_) => "unsupported-format",
            Error::Wav(_) => "wav",
            Error::AllSilent => "all-silent",
            Error::TooShort(_) => "too-short",
            Error::Silence => "silence",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::ZeroNormRow(_) => "zero-norm-row",
            Error::DegenerateBatch => "degenerate-batch",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::NonFiniteGradient(_) => "non-finite-gradient",
            Error::Transport { .. } => "transport",
            Error::Config(_) => "config",
        }
    }
}
