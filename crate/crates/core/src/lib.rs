//! Sampling Jeffreys priors `π(θ) ∝ √det J(θ)` with a box-constrained
//! Metropolis-adjusted Langevin algorithm.
//!
//! The Fisher information `J` may be analytic, an empirical score average, or
//! a particle-smoother estimate for state-space models. The potential is
//! `V = −½ ln det J` and its gradient comes either from closed-form `∂J/∂θ`
//! or from a one-point random-direction difference.

pub mod error;
pub mod artifacts;
pub mod cli;
pub mod diagnostics;
pub mod experiments;
pub mod fim;
pub mod model;
pub mod models;
pub mod particle;
pub mod rng;
pub mod sampler;
pub mod two_stage;
pub mod validation;

pub use error::{Error, Result};
pub use fim::{FimProvider, FisherMatrix, GradientMode, OnePointConfig};
pub use model::{BoxConstraint, ObservationBatch, ParameterVector, ScoreVector, StatisticalModel};
pub use rng::RandomStream;
pub use sampler::{run_chain, ChainResult, SamplerConfig};
