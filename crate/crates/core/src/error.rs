use thiserror::Error;

use crate::device::Partition;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Driving a line above the read voltage would disturb the stored conductances.
    #[error("{volts} V on line {line} exceeds the read limit of {limit} V")]
    VoltageExceedsReadLimit { line: usize, volts: f64, limit: f64 },

    #[error("partition {partition:?} does not fit in a {rows}x{cols} crossbar")]
    PartitionOutOfBounds {
        partition: Partition,
        rows: usize,
        cols: usize,
    },

    #[error("invalid device parameters: {0}")]
    InvalidDevice(String),

    #[error("value {value} outside [{min}, {max}]")]
    ValueOutOfRange { value: f64, min: f64, max: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("incomplete cache: {0}")]
    IncompleteCache(String),

    #[error("not a probability vector: {0}")]
    NotAProbability(String),

    #[error("signal has {len} frames, need at least {min}")]
    SignalTooShort { len: usize, min: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
