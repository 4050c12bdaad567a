use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite (pivot {pivot} at row {row}, jitter {jitter:e})")]
    NotPositiveDefinite { row: usize, pivot: f64, jitter: f64 },

    #[error("cannot draw {requested} distinct examples from a universe of {available}")]
    InsufficientUniverse { requested: u64, available: u64 },

    #[error("{0} is not prime")]
    NotPrime(u64),

    #[error("train fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("newton iteration did not converge after {iterations} iterations")]
    NewtonNonConvergence { iterations: usize },

    #[error("log-space fit needs strictly positive gaps, got {0}")]
    NonPositiveDelta(f64),

    #[error("regression design is degenerate: need at least two distinct x values")]
    DegenerateDesign,

    #[error("correlation undefined: input has zero variance")]
    ZeroVariance,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_check(cond: bool, what: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(what()))
    }
}
