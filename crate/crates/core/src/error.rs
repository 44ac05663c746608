use thiserror::Error;

use crate::types::AnchorId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is indefinite beyond repair (jitter cap reached)")]
    IndefiniteBeyondRepair,

    #[error("unknown anchor `{0}`")]
    UnknownAnchor(AnchorId),

    #[error("innovation covariance is numerically singular (condition number {condition:e})")]
    SingularInnovation { condition: f64 },

    #[error("measurement stream is not time-sorted at record {index}")]
    UnsortedInput { index: usize },

    #[error("frame timestamp {frame} precedes track timestamp {track}")]
    TimeRegression { track: f64, frame: f64 },

    #[error("initialization needs RSS from at least 3 distinct anchors, got {0}")]
    InsufficientAnchors(usize),

    #[error("no samples")]
    EmptySamples,

    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
