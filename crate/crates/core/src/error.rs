use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Section of a checkpoint file at which decoding failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointSection {
    Magic,
    Version,
    Metadata,
    Manifest,
    Data,
}

impl fmt::Display for CheckpointSection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CheckpointSection::Magic => "magic",
            CheckpointSection::Version => "version",
            CheckpointSection::Metadata => "metadata",
            CheckpointSection::Manifest => "tensor manifest",
            CheckpointSection::Data => "data block",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("signal error: {0}")]
    Signal(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("wav error in {path}: {reason}")]
    Wav { path: PathBuf, reason: String },
    #[error("checkpoint {section} error: {reason}")]
    Checkpoint { section: CheckpointSection, reason: String },
    #[error("stream error: {0}")]
    Stream(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn checkpoint(section: CheckpointSection, reason: impl Into<String>) -> Self {
        Error::Checkpoint { section, reason: reason.into() }
    }
}
