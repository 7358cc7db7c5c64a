use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: String },

    #[error("unsupported format version {version} in {path}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("truncated payload in {0}")]
    Truncated(PathBuf),

    #[error("invalid channel count")]
    InvalidChannelCount,

    #[error("invalid length")]
    InvalidLength,

    #[error("invalid duration")]
    InvalidDuration,

    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("degenerate query embedding")]
    DegenerateQuery,

    #[error("numeric divergence: non-finite loss in batch with seed {batch_seed}")]
    Divergence { batch_seed: u64 },

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code, used by the command-line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => "config_error",
            Error::Divergence { .. } | Error::NonFinite(_) | Error::GradientCheck(_) => "numeric_divergence",
            _ => "data_error",
        }
    }

    /// Process exit status: 2 config error, 3 data error, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self.code() {
            "config_error" => 2,
            "numeric_divergence" => 4,
            _ => 3,
        }
    }
}
