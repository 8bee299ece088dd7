//! Interleaved Gibbs diffusion over mixed discrete and continuous sequences.

pub mod error;
pub mod forward;
pub mod oracle;
pub mod reverse;
pub mod rng;
pub mod schedule;
pub mod state;
pub mod tasks;

pub use error::{IgdError, Result};
