use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("ASCII grid parse error at line {line}, column {column}: {message}")]
    AsciiGrid {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("insufficient lit area: {0}")]
    InsufficientLitArea(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("shape error in {stage}: {message}")]
    Shape { stage: String, message: String },

    #[error("gradient error: {0}")]
    Gradient(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {value}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn shape(stage: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Shape {
            stage: stage.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Internal(_) | Error::Gradient(_) => 3,
            _ => 2,
        }
    }
}
