use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::diagnostics::{ess, median};
use super::hmc::{hmc_step_with, HmcConfig, HmcState};
use crate::ensembles::SeededRng;
use crate::error::{Error, Result};
use crate::gradients::GradMode;

/// A posterior over a real parameter vector, possibly with auxiliary scalars
/// refreshed by Gibbs sweeps between HMC transitions.
pub trait Model {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> Result<f64>;
    fn grad(&self, x: &[f64], mode: GradMode) -> Result<Vec<f64>>;

    /// Update auxiliary scalars given the current HMC block.
    fn gibbs(&mut self, _x: &[f64], _rng: &mut ChaCha8Rng) -> Result<()> {
        Ok(())
    }

    /// Auxiliary scalars appended to each trace row.
    fn auxiliary(&self) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub hmc: HmcConfig,
    pub n_iter: usize,
    #[serde(default)]
    pub warmup: usize,
    #[serde(default = "one")]
    pub thin: usize,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    pub grad_mode: GradMode,
    /// Target acceptance for step-size adaptation during warmup.
    #[serde(default = "default_target")]
    pub target_accept: f64,
}

fn one() -> usize {
    1
}

fn default_target() -> f64 {
    0.8
}

impl ChainConfig {
    pub fn new(hmc: HmcConfig, n_iter: usize, seed: u64, grad_mode: GradMode) -> Self {
        Self { hmc, n_iter, warmup: 0, thin: 1, seed, stream: 0, grad_mode, target_accept: default_target() }
    }

    pub fn with_warmup(mut self, warmup: usize) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn with_thin(mut self, thin: usize) -> Self {
        self.thin = thin;
        self
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }
}

/// Dual-averaging step-size adaptation.
struct StepAdapter {
    mu: f64,
    log_h_bar: f64,
    h_bar_stat: f64,
    count: f64,
    target: f64,
}

impl StepAdapter {
    fn new(h0: f64, target: f64) -> Self {
        Self { mu: (10.0 * h0).ln(), log_h_bar: h0.ln(), h_bar_stat: 0.0, count: 0.0, target }
    }

    fn update(&mut self, accept_prob: f64) -> f64 {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.count += 1.0;
        let m = self.count;
        self.h_bar_stat = (1.0 - 1.0 / (m + T0)) * self.h_bar_stat + (self.target - accept_prob) / (m + T0);
        let log_h = self.mu - m.sqrt() / GAMMA * self.h_bar_stat;
        let w = m.powf(-KAPPA);
        self.log_h_bar = w * log_h + (1.0 - w) * self.log_h_bar;
        log_h.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_h_bar.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmcChain {
    /// Thinned post-warmup states, each the HMC block followed by auxiliaries.
    pub trace: Vec<Vec<f64>>,
    /// Iteration index of each trace row.
    pub iterations: Vec<usize>,
    pub accept_count: usize,
    pub n_iter: usize,
    pub divergences: usize,
    pub seed: u64,
    pub thin: usize,
    pub step_size: f64,
    pub grad_mode: GradMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub acceptance_rate: f64,
    pub ess_min: f64,
    pub ess_median: f64,
    pub seed: u64,
}

impl HmcChain {
    pub fn acceptance_rate(&self) -> f64 {
        self.accept_count as f64 / self.n_iter as f64
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.trace.iter().map(|row| row[k]).collect()
    }

    pub fn n_columns(&self) -> usize {
        self.trace.first().map_or(0, Vec::len)
    }

    /// ESS per column; constant columns report `NaN`.
    pub fn ess(&self) -> Vec<f64> {
        (0..self.n_columns()).map(|k| ess(&self.column(k)).unwrap_or(f64::NAN)).collect()
    }

    pub fn diagnostics(&self) -> Diagnostics {
        let e: Vec<f64> = self.ess().into_iter().filter(|v| v.is_finite()).collect();
        Diagnostics {
            acceptance_rate: self.acceptance_rate(),
            ess_min: e.iter().copied().fold(f64::INFINITY, f64::min),
            ess_median: median(&e),
            seed: self.seed,
        }
    }

    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(crate::ctmc_data::csv_error)?;
        let mut header = vec!["iteration".to_string()];
        header.extend((0..self.n_columns()).map(|k| format!("param_{k}")));
        w.write_record(&header).map_err(crate::ctmc_data::csv_error)?;
        for (it, row) in self.iterations.iter().zip(&self.trace) {
            let mut rec = vec![it.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:.17e}")));
            w.write_record(&rec).map_err(crate::ctmc_data::csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Run HMC-within-Gibbs from `init`. Warmup iterations adapt the step size
/// and are discarded; the remaining `n_iter` iterations use the adapted step
/// (or the configured one when `warmup == 0`) and are thinned into the trace.
pub fn run_chain<M: Model>(model: &mut M, init: &[f64], config: &ChainConfig) -> Result<HmcChain> {
    config.hmc.validate()?;
    if config.n_iter == 0 || config.thin == 0 {
        return Err(Error::InvalidArgument("need n_iter >= 1 and thin >= 1".into()));
    }
    if init.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: init.len() });
    }
    let mut rng = SeededRng::new(config.seed, config.stream).rng();
    let mut state = HmcState { position: init.to_vec(), log_density: model.log_density(init)? };
    let mut adapter = StepAdapter::new(config.hmc.step_size, config.target_accept);
    let mut h = config.hmc.step_size;

    let mut chain = HmcChain {
        trace: Vec::with_capacity(config.n_iter / config.thin + 1),
        iterations: Vec::new(),
        accept_count: 0,
        n_iter: config.n_iter,
        divergences: 0,
        seed: config.seed,
        thin: config.thin,
        step_size: h,
        grad_mode: config.grad_mode,
    };

    for it in 0..config.warmup + config.n_iter {
        let out = {
            let m: &M = model;
            let ld = |x: &[f64]| m.log_density(x);
            let gr = |x: &[f64]| m.grad(x, config.grad_mode);
            hmc_step_with(&state, &ld, &gr, &config.hmc, h, &mut rng)?
        };
        if it < config.warmup {
            h = adapter.update(out.accept_prob);
            if it + 1 == config.warmup {
                h = adapter.final_step();
                chain.step_size = h;
            }
        } else {
            chain.accept_count += out.accepted as usize;
            chain.divergences += out.divergent as usize;
        }
        state = out.state;
        if !model.auxiliary().is_empty() {
            model.gibbs(&state.position, &mut rng)?;
            state.log_density = model.log_density(&state.position)?;
        }
        if it >= config.warmup {
            let k = it - config.warmup;
            if (k + 1) % config.thin == 0 {
                let mut row = state.position.clone();
                row.extend(model.auxiliary());
                chain.trace.push(row);
                chain.iterations.push(k);
            }
        }
    }
    Ok(chain)
}
