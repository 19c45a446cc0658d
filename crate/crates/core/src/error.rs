use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("line count mismatch: {src} source lines vs {tgt} target lines")]
    LineCountMismatch { src: usize, tgt: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("vocabulary hash mismatch: checkpoint {expected:016x}, corpus {found:016x}")]
    VocabMismatch { expected: u64, found: u64 },

    #[error("non-finite loss at pair {pair_index} (epoch {epoch})")]
    NonFinite { pair_index: usize, epoch: usize },

    #[error("alignment/gold mismatch at pair indices {0:?}")]
    IndexMismatch(Vec<usize>),

    #[error("token not in vocabulary: {0}")]
    UnknownToken(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
