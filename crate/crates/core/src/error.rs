use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("symmetric eigensolver did not converge within {max_iter} sweeps")]
    EigenNonConvergence { max_iter: usize },

    /// An iterative solver stopped at its iteration cap.
    #[error("{solver} did not converge within {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// The analytic center problem has no strictly feasible point or an
    /// unbounded barrier.
    #[error("localization set is degenerate: {0}")]
    DegenerateLocalization(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
