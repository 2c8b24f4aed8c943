use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Independent prior applied to every coordinate of a parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    Normal { mean: f64, variance: f64 },
    /// Density `alpha / (2 scale Gamma(1/alpha)) exp(-|x/scale|^alpha)`.
    Bridge { alpha: f64, scale: f64 },
    Flat,
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PriorSpec::Normal { variance, mean } if !(variance > 0.0 && mean.is_finite()) => {
                Err(Error::InvalidArgument(format!("normal prior needs variance > 0, got {variance}")))
            }
            PriorSpec::Bridge { alpha, scale } if !(alpha > 0.0 && alpha <= 1.0 && scale > 0.0) => Err(
                Error::InvalidArgument(format!("bridge prior needs alpha in (0, 1] and scale > 0, got {alpha}, {scale}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Log-density and gradient of the prior summed over `x`.
pub fn prior_logpdf_grad(prior: &PriorSpec, x: &[f64]) -> (f64, Vec<f64>) {
    match *prior {
        PriorSpec::Flat => (0.0, vec![0.0; x.len()]),
        PriorSpec::Normal { mean, variance } => {
            let norm = -0.5 * (2.0 * std::f64::consts::PI * variance).ln();
            let lp = x.iter().map(|v| norm - (v - mean).powi(2) / (2.0 * variance)).sum();
            (lp, x.iter().map(|v| -(v - mean) / variance).collect())
        }
        PriorSpec::Bridge { alpha, scale } => {
            let norm = alpha.ln() - (2.0 * scale).ln() - ln_gamma(1.0 / alpha);
            let lp = x.iter().map(|v| norm - (v / scale).abs().powf(alpha)).sum();
            let grad = x
                .iter()
                .map(|&v| {
                    if v.abs() < 1e-12 {
                        0.0
                    } else {
                        -(alpha / scale) * (v / scale).abs().powf(alpha - 1.0) * v.signum()
                    }
                })
                .collect();
            (lp, grad)
        }
    }
}

/// Conditional draw of the bridge global scale under a Gamma(1, rate 2)
/// prior on `nu = tau^-alpha`: `nu ~ Gamma(1 + K/alpha, rate 2 + sum |eps|^alpha)`.
pub fn gibbs_update_tau<R: Rng + ?Sized>(epsilons: &[f64], alpha: f64, rng: &mut R) -> Result<f64> {
    if epsilons.is_empty() || !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need alpha in (0, 1] and at least one effect, got alpha = {alpha}, K = {}",
            epsilons.len()
        )));
    }
    let (shape, rate) = tau_conditional(epsilons, alpha);
    let nu: f64 = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::InvalidArgument(format!("gamma conditional: {e}")))?
        .sample(rng);
    Ok(nu.powf(-1.0 / alpha))
}

/// Shape and rate of the `nu` conditional.
pub fn tau_conditional(epsilons: &[f64], alpha: f64) -> (f64, f64) {
    let k = epsilons.len() as f64;
    let s: f64 = epsilons.iter().map(|e| e.abs().powf(alpha)).sum();
    (1.0 + k / alpha, 2.0 + s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_at_mean() {
        let (lp, g) = prior_logpdf_grad(&PriorSpec::Normal { mean: 0.0, variance: 2.0 }, &[0.0]);
        assert!((lp + 0.5 * (4.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn flat_is_zero() {
        assert_eq!(prior_logpdf_grad(&PriorSpec::Flat, &[3.0, -1.0]), (0.0, vec![0.0, 0.0]));
    }

    #[test]
    fn bridge_gradient_matches_finite_difference() {
        let p = PriorSpec::Bridge { alpha: 0.25, scale: 1.0 };
        let x = 0.8;
        let h = 1e-6;
        let fd = (prior_logpdf_grad(&p, &[x + h]).0 - prior_logpdf_grad(&p, &[x - h]).0) / (2.0 * h);
        let (_, g) = prior_logpdf_grad(&p, &[x]);
        assert!((g[0] - fd).abs() < 1e-6, "{} vs {fd}", g[0]);
        assert_eq!(prior_logpdf_grad(&p, &[0.0]).1, vec![0.0]);
    }

    #[test]
    fn bridge_alpha_one_is_laplace() {
        let (lp, _) = prior_logpdf_grad(&PriorSpec::Bridge { alpha: 1.0, scale: 2.0 }, &[-1.0]);
        assert!((lp - ((0.25f64).ln() - 0.5)).abs() < 1e-14);
    }

    #[test]
    fn invalid_priors() {
        assert!(PriorSpec::Normal { mean: 0.0, variance: 0.0 }.validate().is_err());
        assert!(PriorSpec::Bridge { alpha: 1.5, scale: 1.0 }.validate().is_err());
        assert!(PriorSpec::Flat.validate().is_ok());
    }
}
