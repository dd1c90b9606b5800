use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PldgError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PldgError {
    /// A configuration value is invalid or two configuration values disagree.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller passed an argument outside the operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Input data is malformed (non-finite values, bad pixels, unknown ids).
    #[error("data error: {0}")]
    Data(String),

    /// Two inputs that must agree (ids, alignments, frozen state) do not.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// A metric is undefined for the given input (e.g. single-class AUC).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Training diverged or could not proceed.
    #[error("training error: {0}")]
    Training(String),

    /// A checkpoint could not be read or does not match the expected model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image error in {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl PldgError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PldgError::Io {
            path: path.into(),
            source,
        }
    }
}
