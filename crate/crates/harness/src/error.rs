use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Invalid(_) => 2,
            HarnessError::Io(_) => 3,
            HarnessError::Numerical(_) => 4,
        }
    }
}

impl From<tomoprior::Error> for HarnessError {
    fn from(e: tomoprior::Error) -> Self {
        match e {
            tomoprior::Error::InvalidArgument(m) => HarnessError::Invalid(m),
            tomoprior::Error::NumericalFailure { message, trace } => {
                HarnessError::Numerical(format!("{message} (objective trace {trace:?})"))
            }
            tomoprior::Error::Io(e) => HarnessError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(HarnessError::Invalid(msg.into()))
}
