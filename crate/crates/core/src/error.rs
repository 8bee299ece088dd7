use thiserror::Error;

/// Errors raised by the state, schedule, process and oracle layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum IgdError {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("position {pos} out of range for sequence of length {len}")]
    PositionOutOfRange { pos: usize, len: usize },
    #[error("position {pos} is {actual}, expected {expected}")]
    KindMismatch {
        pos: usize,
        expected: &'static str,
        actual: &'static str,
    },
    #[error("position {0} is held fixed by conditioning")]
    Conditioned(usize),
    #[error("sequence already contains the mask token at position {0}")]
    AlreadyMasked(usize),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("denoiser output invalid: {0}")]
    InvalidDenoiserOutput(String),
    #[error("non-finite value at sequence time {t}, element time {k}, position {pos}")]
    NonFinite { t: usize, k: usize, pos: usize },
    #[error("state space of {0} states exceeds the enumeration cap")]
    StateSpaceTooLarge(usize),
    #[error("degenerate noising: {0}")]
    DegenerateNoising(String),
    #[error("io: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, IgdError>;

impl From<std::io::Error> for IgdError {
    fn from(e: std::io::Error) -> Self {
        IgdError::Io(e.to_string())
    }
}
