use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped by the kind of failure so that front ends can map
/// them onto exit codes: [`Error::is_data_error`] and
/// [`Error::is_numerical_error`] classify the two non-usage families.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("dataset {0} is required but was not supplied")]
    MissingDataset(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("class {class} has no labeled pixels")]
    MissingClass { class: usize },

    #[error("class {class} has {available} labeled pixels, {requested} requested")]
    InsufficientSamples {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("label {label} outside 1..={num_classes}")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Problems with input files or their contents.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Manifest { .. }
                | Error::MissingDataset(_)
                | Error::ShapeMismatch(_)
                | Error::MissingClass { .. }
                | Error::InsufficientSamples { .. }
                | Error::LabelOutOfRange { .. }
                | Error::Checkpoint(_)
                | Error::Json { .. }
        )
    }

    pub fn is_numerical_error(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}
