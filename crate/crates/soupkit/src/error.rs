use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] soupkit_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("invalid tensor {name}: {reason}")]
    InvalidTensor { name: String, reason: String },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("incomplete simplex grid: {0}")]
    IncompleteGrid(String),
    #[error("missing metric rows: {0}")]
    MissingRows(String),
    #[error("malformed metrics table, line {line}: {reason}")]
    BadMetrics { line: usize, reason: String },
    #[error("job {job} failed: {source}")]
    Job {
        job: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn in_job(self, job: impl Into<String>) -> Self {
        Error::Job { job: job.into(), source: Box::new(self) }
    }
}
