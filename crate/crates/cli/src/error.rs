use igd_core::IgdError;
use igd_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// A verification assertion failed.
    #[error("assertion failed: {0}")]
    Assertion(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Assertion(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<IgdError> for CliError {
    fn from(e: IgdError) -> Self {
        match e {
            IgdError::InvalidLayout(_)
            | IgdError::InvalidValue(_)
            | IgdError::InvalidSchedule(_)
            | IgdError::Parse(_)
            | IgdError::StateSpaceTooLarge(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Config(_) => CliError::Validation(e.to_string()),
            NnError::Core(inner) => inner.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io: {e}"))
    }
}
