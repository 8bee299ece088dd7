use thiserror::Error;

use igd_core::IgdError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("graph misuse: {0}")]
    Graph(String),
    #[error("non-finite activation in {layer}")]
    NonFinite { layer: String },
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] IgdError),
}

pub type Result<T> = std::result::Result<T, NnError>;

impl From<NnError> for IgdError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Core(c) => c,
            NnError::NonFinite { layer } => {
                IgdError::InvalidDenoiserOutput(format!("non-finite activation in {layer}"))
            }
            other => IgdError::InvalidDenoiserOutput(other.to_string()),
        }
    }
}
