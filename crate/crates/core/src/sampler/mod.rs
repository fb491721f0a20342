//! Hamiltonian Monte Carlo over the unconstrained parameterization.

mod fit;
pub mod hmc;
pub mod transform;

pub use fit::{
    chain_rng, hmc_fit, initialize_chain, sample_target, ChainSamples, ChainStats, FitConfig,
    FitWarning, PosteriorSamples, DIVERGENCE_WARNING_RATE,
};
pub use hmc::{leapfrog, ChainOutput, HmcSettings, LogDensity, Point};
pub use transform::Parameterization;
