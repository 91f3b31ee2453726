use std::path::PathBuf;

use thiserror::Error;

/// Every fallible operation in the crate reports through this type.
#[derive(Debug, Error)]
pub enum SumError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid axis {axis} for tensor of rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("gradient error: {0}")]
    Gradient(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("label code {code} out of range (T = {classes})")]
    Label { code: usize, classes: usize },

    #[error("undefined metric {metric}: {reason}")]
    UndefinedMetric { metric: &'static str, reason: String },

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("parse error in {path} at byte {offset}: {detail}")]
    Parse {
        path: PathBuf,
        offset: usize,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("manifest error at {path}: {detail}")]
    Manifest { path: PathBuf, detail: String },

    #[error("training aborted: non-finite loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("gradient check failed for {op}: relative error {rel_err:.3e} exceeds {tolerance:.1e}")]
    Verification {
        op: String,
        rel_err: f64,
        tolerance: f64,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SumError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        SumError::InvalidShape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SumError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI contract: 2 config/IO, 3 numeric abort,
    /// 4 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            SumError::NanLoss { .. } | SumError::NonFinite { .. } => 3,
            SumError::Verification { .. } => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, SumError>;
