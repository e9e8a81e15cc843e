use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or layer shape does not fit the operation it was handed to.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A configuration value is outside its allowed range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Spatial size is not divisible by the pyramid's downsampling factor.
    #[error("spatial size {height}x{width} is not divisible by {multiple}; reflect-pad the input first (see io::pad_reflect)")]
    NeedsPadding { height: usize, width: usize, multiple: usize },

    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(String),

    #[error("input of size {given} is too small for the probe; need at least {required}")]
    ProbeTooSmall { given: usize, required: usize },

    #[error("training diverged at step {step}: loss is not finite (last finite loss {last_finite})")]
    Diverged { step: usize, last_finite: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("pnm parse error at byte {offset}: {reason}")]
    Pnm { offset: usize, reason: String },

    #[error("checkpoint has bad magic bytes")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    Version(u32),

    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("malformed checkpoint: {0}")]
    Malformed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
