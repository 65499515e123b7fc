use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no reference node within bandwidth for node {node}")]
    NoNeighbors { node: usize },

    #[error("singular design; offending columns: {columns:?}")]
    SingularDesign { columns: Vec<usize> },

    /// The aggregated GMM matrix is not invertible (instrument relevance fails).
    #[error("weak identification: {0}")]
    WeakIdentification(String),

    #[error("power iteration did not converge after {iterations} iterations (small spectral gap?)")]
    NonConvergence { iterations: usize },

    #[error("parse error in {file} at line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::DimensionMismatch(_) | Error::Parse { .. } => 2,
            Error::NoNeighbors { .. }
            | Error::SingularDesign { .. }
            | Error::WeakIdentification(_)
            | Error::NonConvergence { .. } => 3,
            Error::Io(_) => 4,
        }
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
