use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the environment, replay buffer, models and trainer.
#[derive(Debug, Error)]
pub enum LvmError {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("episode done: call reset() before stepping again")]
    EpisodeDone,

    #[error("invalid transition: {0}")]
    InvalidTransition(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("corrupt episode file {path}: {reason}")]
    CorruptEpisode { path: PathBuf, reason: String },

    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },

    #[error("checkpoint mismatch in field `{field}`: checkpoint has {found}, expected {expected}")]
    CheckpointMismatch {
        field: String,
        expected: String,
        found: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("diverged imagination at step {step}")]
    DivergedImagination { step: usize },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LvmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LvmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        LvmError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, LvmError>;
