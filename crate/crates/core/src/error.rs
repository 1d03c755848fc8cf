use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("rating {rating} for ({user}, {item}) is outside the scale [1, {scale_max}]")]
    OutOfScale {
        user: String,
        item: String,
        rating: f64,
        scale_max: f64,
    },

    #[error("item {0} is not in the catalog")]
    UnknownItem(String),

    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },

    #[error("no ratings left after activity filtering")]
    EmptyAfterFilter,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no log-bias available for user {0}")]
    MissingTheta(String),

    #[error("singular normal equations ({0}); use a positive regularization")]
    SingularSystem(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("fingerprint mismatch: {0} vs {1}")]
    FingerprintMismatch(String, String),

    #[error("provider {provider} failed: {message}")]
    Provider { provider: String, message: String },

    #[error("{path}: {source}")]
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
}
