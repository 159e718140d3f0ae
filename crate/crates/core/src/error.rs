use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure surfaced by the library.
///
/// Variants fall into two families that callers (notably the CLI) treat
/// differently: input/output and parsing problems, and configuration or
/// shape problems. See [`Error::is_config`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid depth {0}: must be positive and finite")]
    InvalidDepth(f64),

    #[error("point is behind the camera (Z = {0})")]
    BehindCamera(f64),

    #[error("degenerate neighborhood: {valid} usable points")]
    DegenerateNeighborhood { valid: usize },

    #[error("degenerate basis: normal is (nearly) parallel to the camera Y axis (n2 = {n2})")]
    DegenerateBasis { n2: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("parse error on line {line}: {message}")]
    ParseLine { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated input: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for configuration and shape errors, false for IO, parse and
    /// numeric failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Shape(_)
                | Error::InvalidDepth(_)
                | Error::DegenerateBasis { .. }
                | Error::DegenerateNeighborhood { .. }
                | Error::BehindCamera(_)
        )
    }
}
