use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // labels and taxonomy
    #[error("invalid label path {0:?}")]
    InvalidLabel(String),
    #[error("cannot build a taxonomy from an empty label set")]
    EmptyTaxonomy,
    #[error("label path {path} stops at level {len} but no full-depth ({depth}) label extends it")]
    InconsistentDepth {
        path: String,
        len: usize,
        depth: usize,
    },
    #[error("label path {0} is not present in the taxonomy")]
    UnknownLabel(String),

    // numerics
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("row {row} is not unit norm (norm = {norm})")]
    NotUnitNorm { row: usize, norm: f64 },
    #[error("batch needs at least 2 embeddings, got {0}")]
    BatchTooSmall(usize),
    #[error("no pair in the batch has a determined rank")]
    NoIncludedPairs,
    #[error("no quadruplet could be mined from the batch")]
    NoQuadruplets,
    #[error("row {row} projects to a near-zero vector (norm = {norm:e})")]
    DegenerateOutput { row: usize, norm: f64 },
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(&'static str),

    // batching and evaluation
    #[error("balanced batching impossible: no realizable pair of rank {rank}")]
    Coverage { rank: usize },
    #[error(
        "balanced batch needs {needed} examples to cover every rank but batch size is {batch_size}"
    )]
    BatchSizeTooSmall { needed: usize, batch_size: usize },
    #[error("silhouette undefined: {0}")]
    UndefinedSilhouette(String),

    // data
    #[error("data row {row}: expected {expected} features, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("data row {row}: column {column} is not a finite number: {value:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("data row {row}: duplicate id {id:?}")]
    DuplicateId { row: usize, id: String },
    #[error("data row {row}: {source}")]
    RowLabel { row: usize, source: Box<Error> },
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("dataset too small to split: {0} rows, need at least 10")]
    TooSmallToSplit(usize),
    #[error("no rows left for the unseen-class test set")]
    EmptyUnseenSet,
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input or configuration rather than by
    /// the numerics of a run.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::DegenerateOutput { .. }
                | Error::NonFiniteGradient(_)
                | Error::NotUnitNorm { .. }
                | Error::Io { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
