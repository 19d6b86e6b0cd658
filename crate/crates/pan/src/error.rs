use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] pan_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{}: missing frame {index} (expected {})", dir.display(), crate::clip::frame_name(*index))]
    MissingFrame { dir: PathBuf, index: usize },
    #[error("{}: no frames found", dir.display())]
    EmptyClip { dir: PathBuf },
    #[error("{}: resolution {found:?} differs from the clip's {expected:?}", path.display())]
    MixedResolution {
        path: PathBuf,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{}: {reason}", path.display())]
    Index { path: PathBuf, reason: String },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid synthetic dataset spec: {0}")]
    InvalidSpec(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("checkpoint holds a {found} model but {expected} was requested")]
    VariantMismatch { expected: String, found: String },
    #[error("cannot export a map with non-finite values")]
    NonFinite,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
