use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("perturbation error at layer {layer}: {msg}")]
    Perturbation { layer: usize, msg: String },

    #[error("gradient oracle error: {0}")]
    Oracle(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at {location}: {msg}")]
    Parse { location: String, msg: String },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the runner: 1 for anything a user can fix in
    /// their inputs, 2 for failures during execution.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Spec(_) | Error::Parse { .. } => 1,
            _ => 2,
        }
    }
}
