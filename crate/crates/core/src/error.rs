use thiserror::Error;

/// Errors raised anywhere in the inference stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("refusing to materialize a {dim}-dimensional operator (dense cap is {cap})")]
    DenseCapExceeded { dim: usize, cap: usize },

    #[error("numerical breakdown in conjugate gradient at iteration {iteration}: {reason}")]
    NumericalBreakdown { iteration: usize, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("ingestion error at row {row}: {message}")]
    Ingestion { row: usize, message: String },

    #[error("run aborted: {reason}")]
    Aborted {
        reason: String,
        partial: Box<PartialRun>,
    },
}

/// State attached to an aborted run so the caller can inspect where it went wrong.
#[derive(Debug, Clone)]
pub struct PartialRun {
    pub mean: Vec<f64>,
    pub global_iteration: usize,
    pub step_records: Vec<crate::mgvi::StepRecord>,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected,
            actual,
        })
    }
}
