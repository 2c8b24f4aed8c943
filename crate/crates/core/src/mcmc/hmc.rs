use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub step_size: f64,
    pub n_leapfrog: usize,
    /// Diagonal of the mass matrix `G`; empty means identity.
    #[serde(default)]
    pub mass: Vec<f64>,
    /// Fraction by which the number of leapfrog steps is randomly shortened.
    #[serde(default = "default_jitter")]
    pub step_jitter: f64,
}

fn default_jitter() -> f64 {
    0.2
}

impl HmcConfig {
    pub fn new(step_size: f64, n_leapfrog: usize) -> Self {
        Self { step_size, n_leapfrog, mass: Vec::new(), step_jitter: default_jitter() }
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.step_jitter = jitter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) || self.n_leapfrog == 0 {
            return Err(Error::InvalidArgument("need step_size > 0 and n_leapfrog >= 1".into()));
        }
        if self.mass.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::InvalidArgument("mass entries must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.step_jitter) {
            return Err(Error::InvalidArgument(format!("step_jitter must be in [0, 1), got {}", self.step_jitter)));
        }
        Ok(())
    }

    fn mass_at(&self, i: usize) -> f64 {
        self.mass.get(i).copied().unwrap_or(1.0)
    }

    pub fn kinetic(&self, momentum: &[f64]) -> f64 {
        momentum.iter().enumerate().map(|(i, p)| p * p / (2.0 * self.mass_at(i))).sum()
    }

    /// Number of leapfrog steps for one trajectory, uniform on
    /// `[ceil((1 - jitter) L), L]`.
    pub fn draw_steps<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let lo = (((1.0 - self.step_jitter) * self.n_leapfrog as f64).ceil() as usize).clamp(1, self.n_leapfrog);
        if lo == self.n_leapfrog {
            lo
        } else {
            rng.random_range(lo..=self.n_leapfrog)
        }
    }
}

/// `steps` iterations of half kick, drift, half kick with step `h`.
pub fn leapfrog(
    position: &[f64],
    momentum: &[f64],
    grad: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    config: &HmcConfig,
    h: f64,
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut x = position.to_vec();
    let mut p = momentum.to_vec();
    let mut g = grad(&x)?;
    for _ in 0..steps {
        for i in 0..x.len() {
            p[i] += 0.5 * h * g[i];
            x[i] += h * p[i] / config.mass_at(i);
        }
        g = grad(&x)?;
        for i in 0..x.len() {
            p[i] += 0.5 * h * g[i];
        }
        if x.iter().chain(&p).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("divergent trajectory"));
        }
    }
    Ok((x, p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmcState {
    pub position: Vec<f64>,
    pub log_density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: HmcState,
    pub accepted: bool,
    pub divergent: bool,
    /// `min(1, exp(-delta H))`, zero for divergent trajectories.
    pub accept_prob: f64,
}

/// One surrogate-trajectory HMC transition. The trajectory follows `grad`,
/// which may be any approximation; the accept step evaluates the exact
/// Hamiltonian `-log_density + kinetic` at both ends.
pub fn hmc_step<R: Rng + ?Sized>(
    current: &HmcState,
    log_density: &dyn Fn(&[f64]) -> Result<f64>,
    grad: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    config: &HmcConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    hmc_step_with(current, log_density, grad, config, config.step_size, rng)
}

pub(crate) fn hmc_step_with<R: Rng + ?Sized>(
    current: &HmcState,
    log_density: &dyn Fn(&[f64]) -> Result<f64>,
    grad: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    config: &HmcConfig,
    h: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    let n = current.position.len();
    let momentum: Vec<f64> = (0..n)
        .map(|i| {
            let z: f64 = StandardNormal.sample(rng);
            z * config.mass_at(i).sqrt()
        })
        .collect();
    let steps = config.draw_steps(rng);
    let u: f64 = rng.random();
    let h0 = -current.log_density + config.kinetic(&momentum);
    let reject = |divergent| StepOutcome { state: current.clone(), accepted: false, divergent, accept_prob: 0.0 };

    let (x, p) = match leapfrog(&current.position, &momentum, grad, config, h, steps) {
        Ok(xp) => xp,
        Err(_) => return Ok(reject(true)),
    };
    let lp = match log_density(&x) {
        Ok(lp) if lp.is_finite() => lp,
        _ => return Ok(reject(true)),
    };
    let h1 = -lp + config.kinetic(&p);
    let accept_prob = (h0 - h1).exp().min(1.0);
    if !accept_prob.is_finite() {
        return Ok(reject(true));
    }
    if h1 <= h0 || u < accept_prob {
        Ok(StepOutcome { state: HmcState { position: x, log_density: lp }, accepted: true, divergent: false, accept_prob })
    } else {
        Ok(StepOutcome { state: current.clone(), accepted: false, divergent: false, accept_prob })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::SeededRng;

    fn std_normal_grad(x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.iter().map(|v| -v).collect())
    }

    #[test]
    fn single_step_matches_scheme() {
        let cfg = HmcConfig { step_size: 0.1, n_leapfrog: 1, mass: vec![2.0], step_jitter: 0.0 };
        let grad = |x: &[f64]| Ok(vec![-3.0 * x[0] + 1.0]);
        let (x, _) = leapfrog(&[0.5], &[0.2], &grad, &cfg, 0.1, 1).unwrap();
        let expected = 0.5 + 0.1 / 2.0 * (0.2 + 0.05 * (-1.5 + 1.0));
        assert_eq!(x[0], expected);
    }

    #[test]
    fn reversible() {
        let cfg = HmcConfig::new(0.07, 25);
        let grad = |x: &[f64]| Ok(vec![-x[0] - 0.3 * x[1].powi(3), -x[1] + 0.2 * x[0].sin()]);
        let (x, p) = leapfrog(&[0.4, -1.1], &[0.9, 0.3], &grad, &cfg, 0.07, 25).unwrap();
        let neg: Vec<f64> = p.iter().map(|v| -v).collect();
        let (x0, p0) = leapfrog(&x, &neg, &grad, &cfg, 0.07, 25).unwrap();
        assert!((x0[0] - 0.4).abs() < 1e-10 && (x0[1] + 1.1).abs() < 1e-10);
        assert!((p0[0] + 0.9).abs() < 1e-10 && (p0[1] + 0.3).abs() < 1e-10);
    }

    #[test]
    fn energy_error_is_second_order() {
        let cfg = HmcConfig::new(1.0, 1);
        let energy = |x: f64, p: f64| 0.5 * x * x + 0.5 * p * p;
        let errs: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&h| {
                let steps = (1.0 / h) as usize;
                let (x, p) = leapfrog(&[1.0], &[0.0], &std_normal_grad, &cfg, h, steps).unwrap();
                (energy(x[0], p[0]) - energy(1.0, 0.0)).abs()
            })
            .collect();
        let slope = ((errs[0] / errs[2]).ln()) / (4f64).ln();
        assert!((slope - 2.0).abs() <= 0.2, "slope {slope}, errors {errs:?}");
    }

    #[test]
    fn downhill_always_accepted() {
        // A flat target has delta H = 0 for every trajectory.
        let cfg = HmcConfig::new(0.3, 4);
        let mut rng = SeededRng::new(1, 0).rng();
        let zero = |x: &[f64]| Ok(vec![0.0; x.len()]);
        let state = HmcState { position: vec![0.0], log_density: 0.0 };
        for _ in 0..100 {
            assert!(hmc_step(&state, &|_| Ok(0.0), &zero, &cfg, &mut rng).unwrap().accepted);
        }
    }

    #[test]
    fn divergence_rejects() {
        let cfg = HmcConfig::new(0.1, 3);
        let bad = |_: &[f64]| Ok(vec![f64::NAN]);
        let state = HmcState { position: vec![0.0], log_density: 0.0 };
        let out = hmc_step(&state, &|_| Ok(0.0), &bad, &cfg, &mut SeededRng::new(2, 0).rng()).unwrap();
        assert!(out.divergent && !out.accepted);
        assert_eq!(out.state, state);
    }

    #[test]
    fn jittered_steps_in_range() {
        let cfg = HmcConfig::new(0.1, 10);
        let mut rng = SeededRng::new(3, 0).rng();
        for _ in 0..200 {
            let s = cfg.draw_steps(&mut rng);
            assert!((8..=10).contains(&s));
        }
    }
}
