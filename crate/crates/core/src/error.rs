use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("image {height}x{width} is too small for {levels} pyramid levels")]
    TooSmall {
        height: usize,
        width: usize,
        levels: usize,
    },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("empty level subset")]
    EmptyLevels,

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("frame {height}x{width} is smaller than the {patch}x{patch} patch")]
    FrameTooSmall {
        height: usize,
        width: usize,
        patch: usize,
    },

    #[error("sequence has {0} frames, at least 3 are required")]
    TooFewFrames(usize),

    #[error("failed to decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("failed to encode image: {0}")]
    Encode(String),

    #[error("checksum mismatch: container is corrupt or truncated")]
    Checksum,

    #[error("unsupported container version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("malformed container: {0}")]
    Malformed(String),

    #[error("missing entry `{0}` in container")]
    MissingEntry(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Error {
    Error::ShapeMismatch {
        expected: format!("{expected:?}"),
        actual: format!("{actual:?}"),
    }
}
