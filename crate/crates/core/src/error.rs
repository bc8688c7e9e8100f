use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced anywhere in the library.
///
/// Variants are grouped into families (see [`ErrorFamily`]) so that the CLI can
/// map them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("video too short: need {required} frames, have {actual}")]
    VideoTooShort { required: usize, actual: usize },

    #[error("crop {crop_h}x{crop_w} does not fit in {height}x{width} frames")]
    CropTooLarge {
        crop_h: usize,
        crop_w: usize,
        height: usize,
        width: usize,
    },

    #[error("invalid clip: {0}")]
    InvalidClip(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("distractor variant `{0}` requires a donor clip")]
    MissingDonor(String),

    #[error("invalid distractor spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("negative set is empty")]
    EmptyNegatives,

    #[error("integrity violation: positive of anchor {anchor} found in its negative set")]
    PositiveInNegatives { anchor: usize },

    #[error("parameter trees are not congruent: {0}")]
    IncongruentParams(String),

    #[error("unknown split `{0}`")]
    UnknownSplit(String),

    #[error("unknown record `{0}`")]
    UnknownRecord(String),

    #[error("{path}: corrupt file at byte offset {offset}: {reason}")]
    CorruptFile {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

/// Coarse error classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Config,
    Io,
    Numeric,
    Data,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn corrupt(path: impl Into<PathBuf>, offset: u64, reason: impl Into<String>) -> Self {
        Error::CorruptFile {
            path: path.into(),
            offset,
            reason: reason.into(),
        }
    }

    pub fn family(&self) -> ErrorFamily {
        match self {
            Error::Config(_)
            | Error::InvalidSpec(_)
            | Error::UnknownSplit(_)
            | Error::UnknownRecord(_) => ErrorFamily::Config,
            Error::Io { .. } | Error::Json { .. } | Error::CorruptFile { .. } => ErrorFamily::Io,
            Error::Numeric(_) | Error::Degenerate(_) => ErrorFamily::Numeric,
            _ => ErrorFamily::Data,
        }
    }
}
