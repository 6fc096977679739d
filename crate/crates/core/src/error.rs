use std::path::PathBuf;

/// Crate-wide error type.
///
/// The variants map onto the process exit codes used by the CLI:
/// `Usage` -> 1, `Config` -> 1, `Data` -> 2, `Numerical` -> 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller passed arguments that can never work (bad flag combinations,
    /// too-short sequences, mismatched trajectories).
    #[error("usage error: {0}")]
    Usage(String),

    /// Inconsistent configuration: shape mismatches, invalid constants,
    /// network profiles that cannot be built.
    #[error("configuration error: {0}")]
    Config(String),

    /// Broken or missing input data (frames, annotations, checkpoints).
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure: non-finite values in activations, gradients or
    /// losses, failed gradient checks.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Data(_) | Error::Io { .. } => 2,
            Error::Numerical(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
