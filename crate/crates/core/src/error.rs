use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    /// Annotation or artifact file violates its documented schema.
    #[error("schema error: {0}")]
    Schema(String),
    /// Invalid configuration (bad fractions, zero epochs, ...).
    #[error("config error: {0}")]
    Config(String),
    /// An operation was called outside its contract (dimension mismatch,
    /// non-simplex scores, box outside image, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A requested backend exists in the registry but cannot run here.
    #[error("backend capability error: {0}")]
    Capability(String),
    /// One or more dataset records failed to load; each item is reported.
    #[error("dataset load failed with {} item error(s):\n{}", items.len(), items.join("\n"))]
    DatasetLoad { items: Vec<String> },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad configuration or malformed input files,
    /// as opposed to runtime failures. The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Schema(_) | Error::Config(_))
    }
}
