//! Surrogate-trajectory Hamiltonian Monte Carlo: leapfrog trajectories driven
//! by any gradient approximation, accepted with the exact Hamiltonian.

mod chain;
mod diagnostics;
mod hmc;
mod prior;
mod targets;

pub use chain::{run_chain, ChainConfig, Diagnostics, HmcChain, Model};
pub use diagnostics::{correlation, ess, ks_statistic, mcse_mean, mean, median, variance};
pub use hmc::{hmc_step, leapfrog, HmcConfig, HmcState, StepOutcome};
pub use prior::{gibbs_update_tau, prior_logpdf_grad, tau_conditional, PriorSpec};
pub use targets::{EndpointPosterior, GaussianTarget, PhyloPosterior, PhyloSampling};
