use thiserror::Error;

/// Errors raised across the estimation and simulation pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no detectable sensor subset exists for this system")]
    SynthesisImpossible,
    #[error("gain synthesis failed after {iterations} iterations (best residual violation {best_violation:.3e})")]
    SynthesisFailure {
        iterations: usize,
        best_violation: f64,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::Toml(_) | Error::InvalidInput(_) | Error::Io(_) => 2,
            Error::Json(_) => 2,
            Error::SynthesisImpossible | Error::SynthesisFailure { .. } => 3,
            Error::Numeric(_) => 4,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
