use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape/dimension mismatch, naming the offending axis.
    #[error("{op}: {axis} mismatch: expected {expected}, got {got}")]
    Dim {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },

    /// Invalid configuration value (even kernel extent, non-divisible pool, ...).
    #[error("{op}: {msg}")]
    Config { op: &'static str, msg: String },

    /// Invalid argument at a call site (empty sequence, empty test set, ...).
    #[error("{0}")]
    Arg(String),

    /// A bounded computation would exceed its resource budget.
    #[error("{0}")]
    Resource(String),

    /// A numeric diagnostic (non-finite loss, all-infeasible batch, ...).
    #[error("{0}")]
    Diagnostic(String),

    /// Malformed container file.
    #[error("{path}: {kind}")]
    Parse { path: String, kind: ParseError },

    /// I/O failure, with the file path that triggered it.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("bad magic: expected {expected:?}, got {got:?}")]
    BadMagic { expected: [u8; 4], got: [u8; 4] },

    #[error("unsupported format version {0}")]
    Version(u32),

    #[error("truncated payload: expected {expected} more bytes, found {got}")]
    Truncated { expected: usize, got: usize },

    #[error("inconsistent shape: {0}")]
    Shape(String),

    #[error("invalid field: {0}")]
    Invalid(String),
}

impl Error {
    pub fn dim(op: &'static str, axis: &'static str, expected: usize, got: usize) -> Self {
        Error::Dim {
            op,
            axis,
            expected,
            got,
        }
    }

    pub fn config(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Config {
            op,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, kind: ParseError) -> Self {
        Error::Parse {
            path: path.into(),
            kind,
        }
    }
}
