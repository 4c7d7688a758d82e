use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid alignment error: {0}")]
    GridAlignment(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("boundary error: {0}")]
    Boundary(String),

    #[error("budget exceeded: {estimate} tree nodes requested, limit is {limit}")]
    Budget { estimate: u128, limit: u128 },

    #[error("Picard iteration diverged at step {step} (declared alpha = {alpha}); the z-contraction assumption looks violated")]
    Contraction { step: usize, alpha: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected,
            got,
            context,
        })
    }
}
