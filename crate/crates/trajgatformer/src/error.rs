//! Crate-wide error type and process exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input line in a delimited text file.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Input violates a data invariant (duplicate keys, inconsistent units).
    #[error("data integrity error: {0}")]
    Integrity(String),

    /// Not enough data to carry out the requested operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Invalid configuration or an unusable combination of options.
    #[error("config error: {0}")]
    Config(String),

    /// Tensor shapes do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Degenerate linear system (e.g. collinear calibration points).
    #[error("singular system: {0}")]
    Singular(String),

    /// Projective mapping sent a point to infinity (|w| below threshold).
    #[error("point at infinity: homogeneous w = {w:e}")]
    PointAtInfinity { w: f64 },

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training diverged (non-finite loss).
    #[error("training failure at optimizer step {step}: {msg}")]
    TrainingFailure { step: u64, msg: String },

    /// Checkpoint parameters cannot seed the requested model.
    #[error("transfer incompatible: {}", mismatches.join(", "))]
    TransferIncompatible { mismatches: Vec<String> },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 usage, 3 data, 4 numeric/training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::TransferIncompatible { .. } => 2,
            Error::Parse { .. }
            | Error::Integrity(_)
            | Error::InsufficientData(_)
            | Error::Io { .. } => 3,
            Error::Shape(_)
            | Error::Singular(_)
            | Error::PointAtInfinity { .. }
            | Error::Numeric(_)
            | Error::TrainingFailure { .. } => 4,
        }
    }
}
