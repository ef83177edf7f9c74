use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the localization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x}, {y}) lies outside the grid bounds")]
    OutOfBounds { x: f64, y: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("cell ({ix}, {iy}) holds no training samples")]
    UnoccupiedCell { ix: i64, iy: i64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("format error at row {row}, column {column}: {message}")]
    Format {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("corpus is already normalized")]
    AlreadyNormalized,

    #[error("reference walk too short: {0}")]
    InsufficientWalk(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("backward called without a cached forward pass")]
    StaleCache,

    #[error("loss diverged (non-finite) at epoch {epoch}")]
    DivergedLoss { epoch: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown start location {id} (reference set has {count})")]
    UnknownStartLocation { id: usize, count: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("neighbor graph is disconnected; component sizes {sizes:?}")]
    DisconnectedGraph { sizes: Vec<usize> },

    #[error("matrix is not symmetric (|a_ij - a_ji| = {deviation} at ({i}, {j}))")]
    NonSymmetric { i: usize, j: usize, deviation: f64 },

    #[error("matrix has a negative entry {value} at ({i}, {j})")]
    NegativeEntries { i: usize, j: usize, value: f64 },

    #[error("local Gram system of point {0} is singular (duplicate neighbors?)")]
    SingularLocalGram(usize),

    #[error("vector is not unit length (norm {0})")]
    NotNormalized(f64),

    #[error("no sample pairs qualify at lambda = {0}")]
    NoQualifyingPairs(f64),

    #[error("evaluation set is empty")]
    EmptyEvaluation,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
