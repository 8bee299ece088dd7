//! Exact oracles: enumerated chains, mixture-posterior denoisers, Gaussian
//! mixture closed forms, quadrature and the forward-chain checks.

pub mod chain;
pub mod checks;
pub mod gmm;
pub mod mixture;
pub mod quad;
pub mod report;
pub mod target;

pub use chain::{tv, ChainDenoiser, DiscreteFlavor, ExactChain};
pub use checks::{sample_terminal, verify_lemma1, wasserstein_contraction_check};
pub use gmm::{gmm_eps_by_quadrature, gmm_ideal_eps, gmm_log_density, gmm_score};
pub use mixture::MixtureDenoiser;
pub use report::{Assertion, Report};
pub use target::{Atom, Component, TargetDistribution, TargetKind};
