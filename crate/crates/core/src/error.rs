use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across ingestion, fitting, simulation and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV in {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("crash row {row}: road id `{road_id}` not found in road table")]
    UnresolvedRoadId { row: usize, road_id: String },
    #[error("row {row}: column `{column}` has value `{value}`, expected 0 or 1")]
    InvalidBinaryValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("road row {row}: aadt must be positive, got {value}")]
    NonPositiveAadt { row: usize, value: f64 },
    #[error("row {row}: column `{column}` has invalid value `{value}`: {reason}")]
    InvalidValue {
        row: usize,
        column: String,
        value: String,
        reason: String,
    },
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("unknown model term `{0}`")]
    UnknownTerm(String),
    #[error("dataset has no usable records")]
    EmptyDataset,
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("split leaves an empty partition (n = {n}, train fraction = {fraction})")]
    DegenerateSplit { n: usize, fraction: f64 },
    #[error("quasi-complete separation: coefficient `{term}` diverged past {bound}")]
    SeparationDetected { term: String, bound: f64 },
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("multilevel fit needs at least 2 groups, found {0}")]
    InsufficientGroups(usize),
    #[error("variance must be nonnegative, got {0}")]
    NegativeVariance(f64),
    #[error("Gauss-Hermite order {0} outside supported range 1..=101")]
    UnsupportedOrder(usize),
    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),
    #[error("fit did not converge")]
    NotConverged,
    #[error("labels and scores differ in length ({labels} vs {scores})")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("no rows to evaluate")]
    EmptyInput,
    #[error("labels contain a single class; ROC/AUC undefined")]
    OneClassOnly,
    #[error("no models to compare")]
    EmptyComparison,
    #[error("serialization failed: {0}")]
    Serialization(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
