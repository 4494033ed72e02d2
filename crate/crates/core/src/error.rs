use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("idx format error at byte {offset}: {message}")]
    Idx { offset: usize, message: String },

    #[error("model format error at byte {offset}: {message}")]
    ModelFormat { offset: usize, message: String },

    #[error("label {0} is outside 0..=9")]
    InvalidLabel(u32),

    #[error("neuron index {index} is outside 0..{core_size}")]
    NeuronIndex { index: usize, core_size: usize },

    #[error("stimulus {stim} exceeds the maximum stimulus {max_stim}")]
    StimulusRange { stim: u32, max_stim: u32 },

    #[error("hidden layer size {0} is not a positive multiple of 64")]
    HiddenSize(usize),

    #[error("{what}: expected length {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("zero is not a valid LFSR state")]
    ZeroLfsrState,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn idx(offset: usize, message: impl Into<String>) -> Self {
        Error::Idx {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn model(offset: usize, message: impl Into<String>) -> Self {
        Error::ModelFormat {
            offset,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
