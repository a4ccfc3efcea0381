use std::path::PathBuf;

use crate::optim::TrainTrace;

pub type Result<T, E = BqrError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum BqrError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate grid: crossing penalty needs at least 2 levels, got {0}")]
    DegenerateGrid(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("level {level} is outside the representable grid range [{min}, {max}]")]
    OutOfGrid { level: f64, min: f64, max: f64 },

    #[error("unknown dataset `{0}` (valid ids: D1, D2, D3, D4, D5, D6)")]
    UnknownDataset(String),

    #[error("dataset has no latent response")]
    MissingLatent,

    #[error("dataset has no labels")]
    MissingLabels,

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, trace: Box<TrainTrace> },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
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

impl BqrError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BqrError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            BqrError::Diverged { .. } | BqrError::Io { .. } | BqrError::Csv(_) | BqrError::Json(_)
        )
    }
}
