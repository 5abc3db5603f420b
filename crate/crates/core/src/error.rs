use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty corpus: n_articles must be positive")]
    EmptyCorpus,

    #[error("ingestion error in {record}: {reason}")]
    Ingestion { record: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("simulation error for user {user}: pool exhausted after {accepted} of {wanted} acceptances")]
    PoolExhausted {
        user: usize,
        accepted: usize,
        wanted: usize,
    },

    #[error("landmark error: typology `{0}` has no users")]
    EmptyTypology(String),

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("non-finite gradient at parameter {index} (value {value})")]
    NonFiniteGradient { index: usize, value: f64 },

    #[error("non-finite loss term `{0}`")]
    NonFiniteLoss(&'static str),

    #[error("pretraining error: {0}")]
    Pretraining(String),

    #[error("training diverged at epoch {epoch}: total loss {loss} exceeds 10x initial {initial}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },

    #[error("undefined embedding for user {0}: all ratings are zero")]
    UndefinedEmbedding(usize),

    #[error("degenerate landmark set: {0}")]
    DegenerateLandmarks(String),

    #[error("empty topic {0}: no article covers it")]
    EmptyTopic(usize),

    #[error("undefined political tolerance: bias matrix is all zero")]
    ZeroBiasMatrix,

    #[error("missing artifact {path}: run `{producer}` first")]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("stage `{stage}` failed")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
