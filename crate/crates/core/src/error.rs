use thiserror::Error;

use crate::clock::Frequency;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid clock configuration: {0}")]
    InvalidClock(String),

    #[error("no clock configuration generates {0} MHz")]
    NoConfig(Frequency),

    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),

    #[error("invalid layer {index}: {reason}")]
    InvalidLayer { index: usize, reason: String },

    #[error("granularity {0} is not one of 0, 2, 4, 8, 12, 16")]
    InvalidGranularity(u32),

    #[error("layer {layer}: granularity {g} is unsupported for layers that are neither depthwise nor pointwise")]
    UnsupportedGranularity { layer: usize, g: u32 },

    #[error("invalid operating point: {0}")]
    InvalidPoint(String),

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("line {line}: layer {layer} g={g} hfo={hfo} conflicts with an earlier row")]
    Conflict { line: usize, layer: usize, g: u32, hfo: String },

    #[error("layer {0} has no operating points")]
    EmptyProfile(usize),

    #[error("invalid plan problem: {0}")]
    InvalidProblem(String),

    #[error("exhaustive search space of {0} combinations exceeds the limit")]
    SearchSpaceTooLarge(u128),

    #[error("layer {0} has no g=0 point eligible for the baseline")]
    NoBaselinePoint(usize),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
