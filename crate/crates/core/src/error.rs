use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed npy header: {0}")]
    MalformedHeader(String),
    #[error("unsupported npy dtype {0:?} (expected <f4 or <f8)")]
    UnsupportedDtype(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("could not decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("could not encode image {path}: {message}")]
    Encode { path: PathBuf, message: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("support mask has no foreground on the feature grid")]
    EmptyForeground,
    #[error("heatmap aggregation needs at least one foreground prototype")]
    NoForegroundPrototype,

    #[error("every threshold candidate is empty")]
    AllCandidatesEmpty,
    #[error("a_ref mode is `fixed` but no a_ref_fixed value was given")]
    MissingFixedValue,

    #[error("prior mask is empty")]
    EmptyPrior,
    #[error("region is empty")]
    EmptyRegion,

    #[error("bridge protocol error: {0}")]
    Protocol(String),
    #[error("bridge request timed out")]
    Timeout,
    #[error("bridge does not know image {0:?}")]
    UnknownImage(String),
    #[error("segmenter failure: {0}")]
    SegmenterFailure(String),

    #[error("ground truth mask is empty")]
    EmptyGroundTruth,
    #[error("no evaluation records")]
    EmptyList,

    #[error("required input {} does not exist", .0.display())]
    MissingInput(PathBuf),
    #[error("no query images found in {}", .0.display())]
    NoQueries(PathBuf),
    #[error("all {0} query images failed")]
    AllQueriesFailed(usize),
}

impl Error {
    /// Errors caused by bad settings or missing inputs rather than by data.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::MissingFixedValue | Error::MissingInput(_) | Error::NoQueries(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
