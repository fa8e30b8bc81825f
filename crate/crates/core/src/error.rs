use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition or invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A file exists but its contents are malformed or inconsistent.
    #[error("format error in {component}: {message}")]
    Format { component: String, message: String },

    /// Package or checkpoint written by an incompatible format version.
    #[error("unsupported format version {found:?} in {component} (expected {expected:?})")]
    Version {
        component: String,
        found: String,
        expected: String,
    },

    /// API misuse, e.g. running a backward pass without its forward state.
    #[error("usage error: {0}")]
    Usage(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {message}")]
    Divergence { step: usize, message: String },

    #[error("atlas capacity exceeded: {0}")]
    Capacity(String),

    #[error("zero level set is empty; no mesh extracted")]
    EmptyMesh,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn format(component: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            component: component.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}
