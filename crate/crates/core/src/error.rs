use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

/// Errors raised anywhere in the core pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("rank {rank} exceeds the supported maximum of 3")]
    Rank { rank: usize },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what}: no valid entries after masking")]
    EmptyMask { what: &'static str },

    #[error("class label {label} out of range for {n_classes} classes")]
    ClassOutOfRange { label: usize, n_classes: usize },

    #[error("action units with zero occurrences in training labels: {units:?}")]
    ZeroOccurrence { units: Vec<String> },

    #[error("unknown stream `{0}`")]
    UnknownStream(String),

    #[error("stream `{stream}` expects dimension {expected}, got {actual}")]
    StreamDimension {
        stream: String,
        expected: usize,
        actual: usize,
    },

    #[error("window length {len} exceeds positional table length {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("no aligned frames carry the requested streams")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("gradient check failed before training: {0}")]
    GradcheckGuard(String),

    #[error("observer aborted: {0}")]
    Observer(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}
