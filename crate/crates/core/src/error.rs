use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("newton failed at step {step} after {iterations} iterations (residual {residual:e})")]
    Step {
        step: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("epsilon schedule exhausted without meeting the Cauchy tolerance (gaps {gaps:?})")]
    Convergence { gaps: Vec<f64> },

    #[error("{failed} of {total} paths failed, above the 0.1% abort threshold")]
    PathFailures { failed: usize, total: usize },

    #[error("config syntax error at line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },

    #[error("invalid config: {}", .0.join("; "))]
    ConfigInvalid(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::Step { .. } | Error::Convergence { .. } | Error::PathFailures { .. }
        )
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
