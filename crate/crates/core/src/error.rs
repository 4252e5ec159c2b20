//! Error type shared by every module in the crate.

use std::fmt;
use std::io;
use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the toolkit.
#[derive(Debug)]
pub enum Error {
    /// Underlying I/O failure, annotated with the path that was touched.
    Io { path: PathBuf, source: io::Error },
    /// A binary or text artifact did not match its documented layout.
    Format { path: PathBuf, detail: String },
    /// Two containers disagreed on a dimension that must match.
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// A caller-supplied value violated a documented precondition.
    InvalidArgument { detail: String },
    /// A metric or statistic is undefined on the given input.
    Degenerate { detail: String },
    /// Training produced a non-finite loss and was aborted.
    NonFiniteLoss { step: usize },
    /// A map-layout optimization step produced non-finite coordinates.
    NonFiniteCoordinate { iteration: usize },
    /// A run-configuration file could not be parsed.
    Config { line: usize, detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => {
                write!(f, "i/o error on {}: {}", path.display(), source)
            }
            Error::Format { path, detail } => {
                write!(f, "malformed file {}: {}", path.display(), detail)
            }
            Error::ShapeMismatch {
                what,
                expected,
                got,
            } => {
                write!(f, "{what}: expected {expected}, got {got}")
            }
            Error::InvalidArgument { detail } => write!(f, "invalid argument: {detail}"),
            Error::Degenerate { detail } => write!(f, "degenerate input: {detail}"),
            Error::NonFiniteLoss { step } => {
                write!(f, "non-finite loss at training step {step}; run aborted")
            }
            Error::NonFiniteCoordinate { iteration } => {
                write!(
                    f,
                    "non-finite map coordinate at iteration {iteration}; layout aborted"
                )
            }
            Error::Config { line, detail } => {
                write!(f, "config error at line {line}: {detail}")
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    /// Convenience constructor for [`Error::InvalidArgument`].
    pub fn invalid(detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            detail: detail.into(),
        }
    }

    /// Convenience constructor for [`Error::Io`].
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Convenience constructor for [`Error::Format`].
    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
