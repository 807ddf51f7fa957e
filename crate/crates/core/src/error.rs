use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand extents are incompatible (matmul inner dims, channel counts, ...).
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A tensor does not have the layout an operation requires.
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    /// The instruction parser found no view or action keyword.
    #[error("no recognized view or action targets in instruction {0:?}")]
    EmptyTargets(String),
    /// Malformed tensor file, manifest, or checkpoint.
    #[error("format error: {0}")]
    Format(String),
    /// Non-finite loss, failed gradient check, and similar numeric breakdowns.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error on {}: {source}", path.display())]
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
}

pub type Result<T> = std::result::Result<T, Error>;
