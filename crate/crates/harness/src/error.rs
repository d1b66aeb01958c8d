use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for numerical
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Numerical(_) => 3,
            _ => 2,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<doppler::optim::OptimError> for HarnessError {
    fn from(e: doppler::optim::OptimError) -> Self {
        use doppler::optim::OptimError as E;
        match e {
            E::NonFinite { .. }
            | E::Projector
            | E::Filter(_)
            | E::Dp(doppler::dp::DpError::NonFiniteGradient(_)) => {
                HarnessError::Numerical(e.to_string())
            }
            other => HarnessError::Config(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
