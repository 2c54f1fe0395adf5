use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt checkpoint: {0}")]
    Corruption(String),
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("checkpoint does not match model config: {0}")]
    ConfigMismatch(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("landmark error: {0}")]
    Landmark(String),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("{path}: {source}")]
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
