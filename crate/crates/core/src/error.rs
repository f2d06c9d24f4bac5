use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("cannot decode {}: {reason}", .path.display())]
    Decode { path: PathBuf, reason: String },
    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("no candidate masks for image {0}")]
    EmptyCandidates(String),
    #[error("degenerate region: {0}")]
    DegenerateRegion(String),
    #[error("non-finite values at stage {stage}: {what}")]
    Numerics { stage: usize, what: String },
    #[error("weight error: {0}")]
    Weight(String),
    #[error("checkpoint was built for config {found}, current config is {expected}")]
    ConfigHashMismatch { expected: String, found: String },
    #[error("architecture spec error: {0}")]
    Spec(String),
    #[error("unpaired files: {}", .0.join(", "))]
    Pairing(Vec<String>),
    #[error("dataset split is empty: {}", .0.display())]
    EmptyDataset(PathBuf),
    #[error("training diverged at step {step}: {what}")]
    Diverged { step: u64, what: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn shape(what: &str, a: (usize, usize), b: (usize, usize)) -> Self {
        Error::Shape(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
    }
}
