use std::path::PathBuf;

/// Errors produced by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("grid is {height}x{width}, need at least {min}x{min}")]
    DimensionTooSmall {
        height: usize,
        width: usize,
        min: usize,
    },
    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: String, actual: String },
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("class channel {channel} out of range for {num_classes} classes")]
    ChannelOutOfRange { channel: usize, num_classes: usize },
    #[error("invalid probability map: {0}")]
    InvalidProbMap(String),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("forward cache does not belong to this network state")]
    StaleCache,
    #[error("invalid label {label} for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },
    #[error("position ({row}, {col}) out of bounds for {height}x{width}")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("requested {requested} samples but only {available} labeled pixels")]
    TooManySamples { requested: usize, available: usize },
    #[error("duplicate sparse label at image {image_id} ({row}, {col})")]
    DuplicateLabel {
        image_id: usize,
        row: usize,
        col: usize,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("no labeled pixels to evaluate")]
    EmptyEvaluation,
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics (non-finite values, failed checks)
    /// rather than of inputs or the filesystem.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Numerical(_))
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
