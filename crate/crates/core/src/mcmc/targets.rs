use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::chain::Model;
use super::prior::{gibbs_update_tau, prior_logpdf_grad, PriorSpec};
use crate::ctmc_data::{endpoint_loglik, endpoint_loglik_and_grad, rate_matrix_from_log_rates, EndpointDataset};
use crate::error::{Error, Result};
use crate::gradients::GradMode;
use crate::phylo::{tree_loglik, tree_loglik_and_grad, PhyloModel};

/// Independent Gaussian target, optionally with a deliberately wrong
/// surrogate gradient (scaled by `grad_scale` and shifted by `grad_shift`).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub grad_scale: f64,
    pub grad_shift: f64,
}

impl GaussianTarget {
    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], variance: vec![1.0; dim], grad_scale: 1.0, grad_shift: 0.0 }
    }

    pub fn with_wrong_gradient(mut self, scale: f64, shift: f64) -> Self {
        self.grad_scale = scale;
        self.grad_shift = shift;
        self
    }
}

impl Model for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.variance))
            .map(|(v, (m, s2))| -0.5 * (v - m).powi(2) / s2 - 0.5 * (2.0 * std::f64::consts::PI * s2).ln())
            .sum())
    }

    fn grad(&self, x: &[f64], mode: GradMode) -> Result<Vec<f64>> {
        let exact = x.iter().zip(self.mean.iter().zip(&self.variance)).map(|(v, (m, s2))| -(v - m) / s2);
        Ok(match mode {
            GradMode::Exact => exact.collect(),
            _ => exact.map(|g| self.grad_scale * g + self.grad_shift).collect(),
        })
    }
}

/// Posterior over endpoint log-rates with an independent prior on each.
/// With a bridge prior and `update_scale`, the global scale is refreshed by
/// its Gamma conditional and reported as the single auxiliary.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointPosterior {
    pub data: EndpointDataset,
    pub prior: PriorSpec,
    pub update_scale: bool,
}

impl EndpointPosterior {
    pub fn new(data: EndpointDataset, prior: PriorSpec) -> Result<Self> {
        prior.validate()?;
        Ok(Self { data, prior, update_scale: false })
    }

    pub fn with_scale_updates(mut self) -> Result<Self> {
        if !matches!(self.prior, PriorSpec::Bridge { .. }) {
            return Err(Error::InvalidArgument("scale updates need a bridge prior".into()));
        }
        self.update_scale = true;
        Ok(self)
    }
}

impl Model for EndpointPosterior {
    fn dim(&self) -> usize {
        let d = self.data.dim();
        d * (d - 1)
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        let q = rate_matrix_from_log_rates(self.data.dim(), x)?;
        Ok(endpoint_loglik(&q, &self.data)? + prior_logpdf_grad(&self.prior, x).0)
    }

    fn grad(&self, x: &[f64], mode: GradMode) -> Result<Vec<f64>> {
        let (_, g) = endpoint_loglik_and_grad(x, &self.data, mode)?;
        let (_, gp) = prior_logpdf_grad(&self.prior, x);
        Ok(g.iter().zip(&gp).map(|(a, b)| a + b).collect())
    }

    fn gibbs(&mut self, x: &[f64], rng: &mut ChaCha8Rng) -> Result<()> {
        if let PriorSpec::Bridge { alpha, .. } = self.prior {
            let scale = gibbs_update_tau(x, alpha, rng)?;
            self.prior = PriorSpec::Bridge { alpha, scale };
        }
        Ok(())
    }

    fn auxiliary(&self) -> Vec<f64> {
        match self.prior {
            PriorSpec::Bridge { scale, .. } if self.update_scale => vec![scale],
            _ => Vec::new(),
        }
    }
}

/// Settings for the tree posterior's scalar updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhyloSampling {
    pub theta_prior: PriorSpec,
    pub alpha: f64,
    pub tau: f64,
    pub update_tau: bool,
    pub update_gamma: bool,
    /// Random-walk scale on `log gamma`.
    pub gamma_step: f64,
}

impl Default for PhyloSampling {
    fn default() -> Self {
        Self {
            theta_prior: PriorSpec::Normal { mean: 0.0, variance: 2.0 },
            alpha: 0.25,
            tau: 1.0,
            update_tau: true,
            update_gamma: true,
            gamma_step: 0.1,
        }
    }
}

/// Posterior over `(theta, eps)` of a mixed-effects tree model with normal
/// priors on `theta`, a bridge prior on `eps`, a Gamma prior on
/// `tau^-alpha`, and a flat prior on `gamma`. `gamma` and `tau` are refreshed
/// by Gibbs sweeps and reported as auxiliaries `[gamma, tau]`.
#[derive(Debug, Clone)]
pub struct PhyloPosterior {
    pub model: PhyloModel,
    pub sampling: PhyloSampling,
    pub gamma_accepts: usize,
}

impl PhyloPosterior {
    pub fn new(model: PhyloModel, sampling: PhyloSampling) -> Result<Self> {
        sampling.theta_prior.validate()?;
        PriorSpec::Bridge { alpha: sampling.alpha, scale: sampling.tau }.validate()?;
        Ok(Self { model, sampling, gamma_accepts: 0 })
    }

    fn with_params(&self, x: &[f64]) -> Result<PhyloModel> {
        if x.len() != self.model.generator.n_regression() {
            return Err(Error::DimensionMismatch { expected: self.model.generator.n_regression(), got: x.len() });
        }
        let mut m = self.model.clone();
        m.generator.set_regression_params(x);
        Ok(m)
    }

    fn prior(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let k = self.model.generator.theta.len();
        let (lt, mut gt) = prior_logpdf_grad(&self.sampling.theta_prior, &x[..k]);
        let bridge = PriorSpec::Bridge { alpha: self.sampling.alpha, scale: self.sampling.tau };
        let (le, ge) = prior_logpdf_grad(&bridge, &x[k..]);
        gt.extend(ge);
        (lt + le, gt)
    }
}

impl Model for PhyloPosterior {
    fn dim(&self) -> usize {
        self.model.generator.n_regression()
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok(tree_loglik(&self.with_params(x)?)? + self.prior(x).0)
    }

    fn grad(&self, x: &[f64], mode: GradMode) -> Result<Vec<f64>> {
        let g = tree_loglik_and_grad(&self.with_params(x)?, mode)?;
        let (_, gp) = self.prior(x);
        Ok(g.theta.iter().chain(&g.epsilon).zip(&gp).map(|(a, b)| a + b).collect())
    }

    fn gibbs(&mut self, x: &[f64], rng: &mut ChaCha8Rng) -> Result<()> {
        self.model.generator.set_regression_params(x);
        if self.sampling.update_tau {
            self.sampling.tau = gibbs_update_tau(&self.model.generator.epsilon, self.sampling.alpha, rng)?;
        }
        if self.sampling.update_gamma {
            let current = tree_loglik(&self.model)?;
            let g0 = self.model.generator.gamma;
            let z: f64 = StandardNormal.sample(rng);
            let g1 = g0 * (self.sampling.gamma_step * z).exp();
            let mut proposal = self.model.clone();
            proposal.generator.gamma = g1;
            let u: f64 = rng.random();
            if let Ok(next) = tree_loglik(&proposal) {
                // Flat prior on gamma; the log-scale proposal contributes gamma'/gamma.
                if u.ln() < next - current + (g1 / g0).ln() {
                    self.model.generator.gamma = g1;
                    self.gamma_accepts += 1;
                }
            }
        }
        Ok(())
    }

    fn auxiliary(&self) -> Vec<f64> {
        vec![self.model.generator.gamma, self.sampling.tau]
    }
}
