// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum CptError {
    #[error("invalid natural parameter {eta} for {family}")]
    InvalidNaturalParameter { family: String, eta: f64 },

    #[error("mean {mean} outside the admissible domain of {family}")]
    InvalidMean { family: String, mean: f64 },

    #[error("parameter outside the parameter space: {}", violations.join("; "))]
    InvalidParameter { violations: Vec<String> },

    #[error("expected a parameter vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model specification '{spec}': {reason}")]
    ModelSpec { spec: String, reason: String },

    #[error("segment [{start}, {end}] has {len} observations; at least {min} are required")]
    SegmentTooShort {
        start: usize,
        end: usize,
        len: usize,
        min: usize,
    },

    #[error("segment [{start}, {end}] is constant; the likelihood has no unique maximizer")]
    DegenerateSegment { start: usize, end: usize },

    #[error("{saturated} conditional means hit the numeric guard (at most {allowed} allowed)")]
    NumericDegeneracy { saturated: usize, allowed: usize },

    #[error("maximum likelihood fit failed: {0}")]
    FitFailure(String),

    #[error("series of length {n} is too short; the sweep needs at least {min}")]
    SeriesTooShort { n: usize, min: usize },

    #[error("no valid point on the statistic curve ({points} points, all fits failed)")]
    AllInvalidCurve { points: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("row {row}: value {value} is outside the support of {family}")]
    Support {
        row: usize,
        value: u64,
        family: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CptError {
    /// True for errors caused by the input data or model rather than the caller's arguments.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, CptError::InvalidArgument(_))
    }
}

pub type Result<T, E = CptError> = std::result::Result<T, E>;
