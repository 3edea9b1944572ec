use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unsupported channel count {channels} for {operation}")]
    UnsupportedChannels { operation: &'static str, channels: usize },

    #[error("image {width}x{height} is too small for {operation} (needs at least {min}x{min})")]
    ImageTooSmall {
        operation: &'static str,
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("{context}: {source}")]
    Task {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("stale forward cache: model changed since the forward pass (cache v{cache}, model v{model})")]
    StaleCache { cache: u64, model: u64 },

    #[error("malformed {kind} file at byte {offset}: {message}")]
    Format {
        kind: &'static str,
        offset: u64,
        message: String,
    },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    /// Attaches a context label such as a task or run name.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Task {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad inputs rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Image(_) => false,
            Error::Task { source, .. } => source.is_validation(),
            _ => true,
        }
    }
}
