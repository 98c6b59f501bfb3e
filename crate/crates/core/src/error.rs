use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("duplicate subject_id {0:?}")]
    DuplicateSubject(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
    },

    #[error("gradient check failed: max relative error {0:e} exceeds tolerance")]
    GradCheck(f64),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Short machine-readable category, used in the CLI's one-line errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Io { .. }
            | Error::Manifest { .. }
            | Error::DuplicateSubject(_)
            | Error::Data(_)
            | Error::Shape(_) => "data",
            Error::NonFinite(_) | Error::Diverged { .. } | Error::GradCheck(_) => "numeric",
            Error::Context { source, .. } => source.kind(),
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 1,
            "data" => 2,
            _ => 3,
        }
    }
}
