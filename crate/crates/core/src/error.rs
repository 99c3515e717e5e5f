use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
///
/// Variants are grouped so that callers (the CLI in particular) can map them
/// onto "data" versus "configuration" failures; see [`Error::is_config`].
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("landmark {index}: {source}")]
    Landmark {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("registration round {round}: {source}")]
    Registration {
        round: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("model compatibility: {0}")]
    ModelCompatibility(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("metrics error: {0}")]
    Metrics(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("mode error: {0}")]
    Mode(String),
    #[error("visibility error: {0}")]
    Visibility(String),
    #[error("model format: {0}")]
    Format(String),
    #[error("unsupported image {path}: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },
    #[error("image decode {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// True for errors caused by bad configuration rather than bad data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Mode(_) | Error::Precondition(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
