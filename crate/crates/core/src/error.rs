use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Header-level trace format violation (missing, extra, or misordered column).
    #[error("trace format error: {0}")]
    TraceFormat(String),

    /// Data-row violation, with the 1-based line number in the source file.
    #[error("line {line}: {message}")]
    TraceRow { line: usize, message: String },

    #[error("trace contains no records")]
    EmptyTrace,

    #[error("series is empty")]
    EmptySeries,

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("correlation undefined: input series is constant")]
    UndefinedCorrelation,

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("insufficient data: need at least {needed} records, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("input kind mismatch: model expects {expected}")]
    InputKindMismatch { expected: &'static str },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
