use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by tensor operations and the model pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not describe {len} elements (all extents must be >= 1)")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("pooling window of {window} frames exceeds sequence length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("sequence length {0} is not a power of two >= 2")]
    NotPowerOfTwo(usize),
    #[error("clip has {len} frames but at least {required} are required")]
    ClipTooShort { len: usize, required: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("a stack needs at least 2 frames, got {0}")]
    StackTooShort(usize),
    #[error("attention encoding needs the retained feature maps")]
    MissingFeatures,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        op,
        reason: reason.into(),
    }
}
