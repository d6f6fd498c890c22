use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("sigma = {sigma}: {source}")]
    Numerical {
        sigma: f64,
        #[source]
        source: mmse_bounds::Error,
    },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Validation(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.into())
    }
}

/// Attaches the noise level to a library error.
pub(crate) fn at(sigma: f64) -> impl Fn(mmse_bounds::Error) -> CliError {
    move |source| CliError::Numerical { sigma, source }
}
