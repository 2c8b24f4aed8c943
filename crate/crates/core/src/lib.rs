//! Derivatives of the CTMC matrix exponential, their error certificates, and
//! surrogate-trajectory Hamiltonian Monte Carlo for generator inference.

pub mod bounds;
pub mod ctmc_data;
pub mod ensembles;
pub mod error;
pub mod experiment;
pub mod gradients;
pub mod io;
pub mod linalg;
pub mod mcmc;
pub mod phylo;

pub use error::{Error, Result};
