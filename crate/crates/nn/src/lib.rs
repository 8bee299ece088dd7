//! A small Dis-Co DiT denoiser with exact reverse-mode gradients, its
//! training losses and loop, and a checkpoint format.

pub mod checkpoint;
pub mod denoiser;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod tape;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use denoiser::NetworkDenoiser;
pub use error::{NnError, Result};
pub use loss::DiscreteLoss;
pub use model::{DiscoDit, DiscoDitConfig};
pub use params::{Grads, ParamStore};
pub use train::{train, TimeSampling, TrainerConfig};
