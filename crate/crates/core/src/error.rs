use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("invalid rate {0}: achievable rate must be non-negative")]
    InvalidRate(f64),

    #[error("invalid distance {0} km: must be positive")]
    InvalidDistance(f64),

    #[error("gain threshold must be positive for the expected reciprocal rate, got {0}")]
    Threshold(f64),

    #[error(
        "quadrature did not converge: estimate {estimate:e}, error {error:e} after {intervals} intervals"
    )]
    Quadrature {
        estimate: f64,
        error: f64,
        intervals: usize,
    },

    #[error("task construction failed: {0}")]
    Construction(String),

    #[error("device index {index} out of range for {devices} devices")]
    DeviceIndex { index: usize, devices: usize },

    #[error("device {device} uploaded with scheduling probability {probability}")]
    Scheduling { device: usize, probability: f64 },

    /// Every eligible device reported a zero gradient (or none is eligible):
    /// there is nothing left to schedule.
    #[error("no device can be scheduled: {0}")]
    Starvation(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("unknown policy `{0}` (expected uniform, ia, ca, ica or ctm)")]
    UnknownPolicy(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}
