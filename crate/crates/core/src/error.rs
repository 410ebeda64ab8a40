use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty frame: {0}")]
    EmptyFrame(String),

    #[error("column `{column}` is degenerate: {reason}")]
    DegenerateColumn { column: String, reason: String },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("insufficient rows: need more than {needed}, got {got}")]
    InsufficientRows { needed: usize, got: usize },

    #[error("solver did not converge after {iterations} iterations (KKT residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("broker connection: {0}")]
    Connection(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for errors caused by bad input or configuration rather than by
    /// a failure while doing the work.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::EmptyFrame(_)
                | Error::DegenerateColumn { .. }
                | Error::DegenerateSample(_)
                | Error::InsufficientRows { .. }
        )
    }
}
