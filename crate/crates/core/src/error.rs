use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = VonError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum VonError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown metric key `{0}`")]
    UnknownMetric(String),

    #[error("metric `{metric}` requires context field `{field}`")]
    MissingContext { metric: &'static str, field: &'static str },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate metric `{metric}`: {reason}")]
    DegenerateMetric { metric: &'static str, reason: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: String, expected: usize, got: usize },

    #[error("invalid point set: {0}")]
    InvalidPointSet(String),

    #[error("invalid ordering: {0}")]
    InvalidOrdering(String),

    #[error("decoder exhausted: every point is already selected")]
    Exhausted,

    #[error("sampling pool has {pool} points, {needed} needed")]
    InsufficientPool { pool: usize, needed: usize },

    #[error("brute force limited to n <= {limit}, got n = {n}")]
    BruteForceGuard { n: usize, limit: usize },

    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint was trained on metric `{trained}`, request uses `{requested}`")]
    MetricMismatch { trained: String, requested: String },

    #[error("time budget exceeded after {millis} ms")]
    Timeout { millis: u128 },

    #[error("{file}:{line}: {msg}")]
    Parse { file: PathBuf, line: usize, msg: String },

    #[error("instance {instance}: {source}")]
    Instance {
        instance: usize,
        #[source]
        source: Box<VonError>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl VonError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VonError::Io { path: path.into(), source }
    }

    /// Strips `Instance` wrappers.
    pub fn root(&self) -> &VonError {
        match self {
            VonError::Instance { source, .. } => source.root(),
            other => other,
        }
    }
}
