//! Desk-scale tasks with implicit constraints, transforms and metrics.

pub mod metrics;
pub mod ring;
pub mod sat;
pub mod tabular;
pub mod transform;

pub use metrics::{tv_hist, w1, w1_proxy};
pub use ring::RingTask;
pub use sat::{check_sat, gen_tiny_sat, sat_to_sequence, SatInstance};
pub use tabular::{load_tabular, TabularDataset};
pub use transform::{logit_inverse, logit_transform};
