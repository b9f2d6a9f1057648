use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("matrix is rank deficient (diagonal {diag:.3e} below tolerance {tol:.3e})")]
    RankDeficient { diag: f64, tol: f64 },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{what} did not converge after {iterations} iterations")]
    NotConverged {
        what: String,
        iterations: usize,
        /// Best coefficient iterate found before the cap.
        best_beta: Vec<f64>,
    },
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
