use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coverage threshold {threshold} not reached on task {task} after {samples} samples")]
    CoverageUnreachable {
        task: usize,
        samples: usize,
        threshold: f64,
    },

    #[error("task {0} has no occupancy grid")]
    MissingGrid(usize),

    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("incompatible model file version {found} (expected {expected})")]
    IncompatibleVersion { found: u32, expected: u32 },

    #[error("instance has {n} tasks; exhaustive planners are limited to {limit} (use the branch-and-bound planner)")]
    TooLarge { n: usize, limit: usize },

    #[error("pretraining failed: only {learned} of {requested} skills learned after {attempts} attempts")]
    Pretraining {
        requested: usize,
        learned: usize,
        attempts: usize,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("invalid experiment config: missing fields [{}]", .0.join(", "))]
    MissingFields(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
