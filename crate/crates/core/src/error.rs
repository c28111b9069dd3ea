use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("feature {feature} has zero variance")]
    ZeroVariance { feature: usize },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("schema error in {}: {msg}", path.display())]
    Schema { path: PathBuf, msg: String },

    #[error("unsupported layer for conversion: {0}")]
    UnsupportedLayer(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
