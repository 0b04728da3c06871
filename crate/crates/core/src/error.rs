use thiserror::Error;

use crate::model::Violation;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid experiment summary: {}", format_violations(.0))]
    InvalidSummary(Vec<Violation>),

    #[error("degenerate z denominator at group {group}, metric {metric}: both variances are zero")]
    DegenerateCell { group: usize, metric: usize },

    #[error("correlation undefined between hypotheses {i} and {j}: zero standard error")]
    DegenerateCorrelation { i: usize, j: usize },

    #[error("need at least {required} rows, got {actual}")]
    TooFewRows { required: usize, actual: usize },

    #[error("row {row} has {actual} columns, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        actual: usize,
    },

    #[error("bucket {bucket} of {buckets} is empty; use fewer buckets")]
    EmptyBucket { bucket: usize, buckets: usize },

    #[error("dimension {dimension} is not divisible by block size {block_size}")]
    BlockSizeMismatch { dimension: usize, block_size: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty p-value vector")]
    EmptyInput,

    #[error("non-finite entry in correlation row {row}")]
    NonFiniteSigma { row: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix factorization failed: {0}")]
    Factorization(String),

    #[error("target power {target} is unreachable: power at the bracket end is {achieved}")]
    UnreachableTarget { target: f64, achieved: f64 },
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
