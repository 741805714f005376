use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("video {video_id}: {message}")]
    Alignment { video_id: String, message: String },

    #[error("video {video_id}: frame {frame} has no skeleton")]
    EmptySkeleton { video_id: String, frame: usize },

    #[error("action probabilities must sum to 1 (got {sum})")]
    NotASimplex { sum: f64 },

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: {term} is not finite")]
    Divergence { epoch: usize, term: &'static str },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("finite-difference evaluation returned a non-finite value at coordinate {0}")]
    NonFinite(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
