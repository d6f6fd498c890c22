use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// Adaptive quadrature ran out of subdivisions before meeting its tolerance.
    #[error("quadrature did not converge: estimate {estimate:e}, error bound {error:e}")]
    Accuracy { estimate: f64, error: f64 },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("degenerate mechanism: {0}")]
    DegenerateMechanism(String),

    #[error("singularity at x = {0}")]
    Singularity(f64),

    #[error("duplicate observation x = {0}; step-function minimization needs distinct values")]
    Tie(f64),

    #[error("instance too large for exhaustive search: {0}")]
    Size(String),

    #[error("no initialization below the loss threshold; best attempt had loss {best_loss}")]
    InitializationFailure { best_loss: f64 },

    #[error("bound side condition fails at sigma = {sigma}")]
    Validity { sigma: f64 },
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
