use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by every module in the crate.
///
/// Variants are deliberately specific where callers (or tests) need to tell
/// failure modes apart; free-form validation failures go through
/// `InvalidInput`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    InvalidInput(String),

    #[error("channel index {index} out of range 1..={count}")]
    ChannelOutOfRange { index: usize, count: usize },

    #[error("duplicate channel index {0}")]
    DuplicateChannel(usize),

    #[error(
        "band centred at {centre_hz} Hz has upper edge {edge_hz} Hz at or above \
         Nyquist {nyquist_hz} Hz"
    )]
    BandAboveNyquist {
        centre_hz: f64,
        edge_hz: f64,
        nyquist_hz: f64,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite intensity in band {band} at iteration {iteration}")]
    NonFinite { band: usize, iteration: usize },

    #[error("solver failed to converge after {iterations} iterations (band {band})")]
    NoConvergence { band: usize, iterations: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    BadVersion(u32),

    #[error("file length mismatch: expected {expected} bytes, found {actual} bytes")]
    Truncated { expected: u64, actual: u64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(
        context: impl Into<String>,
        expected: impl Into<String>,
        actual: impl Into<String>,
    ) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
