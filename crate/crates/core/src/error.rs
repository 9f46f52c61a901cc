use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("measurement index {index} out of range for sensor {sensor} ({count} measurements)")]
    IndexOutOfRange {
        sensor: usize,
        index: usize,
        count: usize,
    },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what} is not symmetric positive definite")]
    NotPositiveDefinite { what: &'static str },

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("sensor {sensor} is not supported by {backend}: {reason}")]
    UnsupportedSensor {
        sensor: usize,
        backend: &'static str,
        reason: &'static str,
    },

    #[error("label {0} appears more than once")]
    LabelCollision(String),

    #[error("all conditional weights are zero")]
    DegenerateWeights,

    #[error("tuple {0} has no detections")]
    NoDetections(String),

    #[error("config: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("enumeration of {size} elements exceeds the guard of {limit}")]
    SpaceTooLarge { size: u128, limit: u128 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
