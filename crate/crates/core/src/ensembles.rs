//! Seeded samplers for random rate-matrix families.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Exp, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RateMatrix};

/// Seed plus stream selector for a counter-based ChaCha generator.
/// Replicate `r` of an experiment uses `stream_id = r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeededRng {
    pub seed: u64,
    pub stream_id: u64,
}

impl SeededRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    pub fn stream(&self, stream_id: u64) -> Self {
        Self { seed: self.seed, stream_id }
    }
}

/// Draw from the Bayesian bridge density `alpha / (2 scale Gamma(1/alpha)) exp(-|x/scale|^alpha)`
/// via `|x/scale|^alpha ~ Gamma(1/alpha, 1)` and a random sign.
pub fn sample_bridge<R: Rng + ?Sized>(alpha: f64, scale: f64, rng: &mut R) -> f64 {
    let g: f64 = Gamma::new(1.0 / alpha, 1.0).expect("valid bridge shape").sample(rng);
    let magnitude = scale * g.powf(1.0 / alpha);
    if rng.random::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum BaseDistribution {
    Exponential { rate: f64 },
    StandardNormal,
    Cauchy { scale: f64 },
    Bridge { alpha: f64, scale: f64 },
}

impl BaseDistribution {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            BaseDistribution::Exponential { rate } => rate > 0.0,
            BaseDistribution::StandardNormal => true,
            BaseDistribution::Cauchy { scale } => scale > 0.0,
            BaseDistribution::Bridge { alpha, scale } => alpha > 0.0 && alpha <= 1.0 && scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid distribution parameters: {self:?}")))
        }
    }

    /// Mean of the distribution (of its absolute value for symmetric laws
    /// used as rates). Infinite for Cauchy.
    pub fn rate_mean(&self) -> f64 {
        match *self {
            BaseDistribution::Exponential { rate } => 1.0 / rate,
            BaseDistribution::StandardNormal => (2.0 / std::f64::consts::PI).sqrt(),
            BaseDistribution::Cauchy { .. } => f64::INFINITY,
            BaseDistribution::Bridge { alpha, scale } => {
                use statrs::function::gamma::gamma;
                scale * gamma(2.0 / alpha) / gamma(1.0 / alpha)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            BaseDistribution::Exponential { rate } => Exp::new(rate).expect("positive rate").sample(rng),
            BaseDistribution::StandardNormal => StandardNormal.sample(rng),
            BaseDistribution::Cauchy { scale } => Cauchy::new(0.0, scale).expect("positive scale").sample(rng),
            BaseDistribution::Bridge { alpha, scale } => sample_bridge(alpha, scale, rng),
        }
    }

    /// A strictly positive rate: the draw itself for the exponential, its
    /// absolute value otherwise.
    fn sample_rate<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let x = self.sample(rng).abs();
            if x > 0.0 && x.is_finite() {
                return x;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleFamily {
    /// Off-diagonal rates iid from the base distribution.
    AsymmetricIid,
    /// Strict lower triangle iid, mirrored.
    SymmetricIid,
    /// Rate `q_ij ~ Exp(mean r_i + c_j)` with row and column means drawn
    /// from the base distribution.
    RowColMeans,
    /// Absolute values of Cauchy draws.
    FoldedCauchy,
    /// Log-rates iid standard normal.
    LogGaussian,
    /// Log-rates iid Bayesian bridge.
    BridgeLogRates,
}

impl std::str::FromStr for EnsembleFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidArgument(format!("unknown ensemble family `{s}`")))
    }
}

/// Recipe for a random generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnsembleSpecJson", into = "EnsembleSpecJson")]
pub struct RateEnsembleSpec {
    pub family: EnsembleFamily,
    pub distribution: BaseDistribution,
    pub dim: usize,
    pub normalize_by_max_abs: bool,
}

impl RateEnsembleSpec {
    pub fn new(family: EnsembleFamily, distribution: BaseDistribution, dim: usize) -> Result<Self> {
        let spec = Self { family, distribution, dim, normalize_by_max_abs: false };
        spec.validate()?;
        Ok(spec)
    }

    pub fn symmetric_exponential(dim: usize) -> Self {
        Self::new(EnsembleFamily::SymmetricIid, BaseDistribution::Exponential { rate: 1.0 }, dim)
            .expect("valid spec")
    }

    pub fn asymmetric_exponential(dim: usize) -> Self {
        Self::new(EnsembleFamily::AsymmetricIid, BaseDistribution::Exponential { rate: 1.0 }, dim)
            .expect("valid spec")
    }

    pub fn with_normalization(mut self, on: bool) -> Self {
        self.normalize_by_max_abs = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidArgument(format!("ensemble dimension must be >= 2, got {}", self.dim)));
        }
        self.distribution.validate()
    }

    pub fn is_symmetric(&self) -> bool {
        self.family == EnsembleFamily::SymmetricIid
    }
}

#[derive(Serialize, Deserialize)]
struct EnsembleSpecJson {
    family: EnsembleFamily,
    distribution: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    dim: usize,
    #[serde(default)]
    normalize_by_max_abs: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl TryFrom<EnsembleSpecJson> for RateEnsembleSpec {
    type Error = Error;
    fn try_from(j: EnsembleSpecJson) -> Result<Self> {
        let param = |k: &str, default: f64| j.params.get(k).copied().unwrap_or(default);
        let distribution = match j.distribution.as_str() {
            "exponential" => BaseDistribution::Exponential { rate: param("rate", 1.0) },
            "standard_normal" => BaseDistribution::StandardNormal,
            "cauchy" => BaseDistribution::Cauchy { scale: param("scale", 1.0) },
            "bridge" => BaseDistribution::Bridge { alpha: param("alpha", 1.0), scale: param("scale", 1.0) },
            other => return Err(Error::InvalidArgument(format!("unknown distribution `{other}`"))),
        };
        let spec = RateEnsembleSpec {
            family: j.family,
            distribution,
            dim: j.dim,
            normalize_by_max_abs: j.normalize_by_max_abs,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<RateEnsembleSpec> for EnsembleSpecJson {
    fn from(s: RateEnsembleSpec) -> Self {
        let mut params = BTreeMap::new();
        let distribution = match s.distribution {
            BaseDistribution::Exponential { rate } => {
                params.insert("rate".into(), rate);
                "exponential"
            }
            BaseDistribution::StandardNormal => "standard_normal",
            BaseDistribution::Cauchy { scale } => {
                params.insert("scale".into(), scale);
                "cauchy"
            }
            BaseDistribution::Bridge { alpha, scale } => {
                params.insert("alpha".into(), alpha);
                params.insert("scale".into(), scale);
                "bridge"
            }
        };
        EnsembleSpecJson {
            family: s.family,
            distribution: distribution.to_string(),
            params,
            dim: s.dim,
            normalize_by_max_abs: s.normalize_by_max_abs,
            seed: None,
        }
    }
}

/// Off-diagonal log-rates for the log-scale families, row-major over `i != j`.
pub fn sample_log_rates<R: Rng + ?Sized>(spec: &RateEnsembleSpec, rng: &mut R) -> Vec<f64> {
    let d = spec.dim;
    let dist = match spec.family {
        EnsembleFamily::LogGaussian => BaseDistribution::StandardNormal,
        _ => spec.distribution,
    };
    let mut logs: Vec<f64> = (0..d * (d - 1)).map(|_| dist.sample(rng)).collect();
    if spec.normalize_by_max_abs {
        let m = logs.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        if m > 0.0 {
            logs.iter_mut().for_each(|x| *x /= m);
        }
    }
    logs
}

/// Fill the off-diagonal of a `d x d` matrix from a row-major `i != j` list.
pub fn off_diagonal_from_vec(d: usize, values: &[f64]) -> Matrix {
    assert_eq!(values.len(), d * (d - 1));
    let mut m = Matrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                m[(i, j)] = values[k];
                k += 1;
            }
        }
    }
    m
}

/// Row-major `i != j` list of the off-diagonal entries.
pub fn off_diagonal_to_vec(m: &Matrix) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d - 1));
    for i in 0..d {
        for j in 0..d {
            if i != j {
                out.push(m[(i, j)]);
            }
        }
    }
    out
}

pub fn sample_rate_matrix(spec: &RateEnsembleSpec, rng: &SeededRng) -> Result<RateMatrix> {
    spec.validate()?;
    let mut r = rng.rng();
    sample_rate_matrix_with(spec, &mut r)
}

pub fn sample_rate_matrix_with<R: Rng + ?Sized>(spec: &RateEnsembleSpec, rng: &mut R) -> Result<RateMatrix> {
    let d = spec.dim;
    let mut m = Matrix::zeros(d, d);
    match spec.family {
        EnsembleFamily::AsymmetricIid => {
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        m[(i, j)] = spec.distribution.sample_rate(rng);
                    }
                }
            }
        }
        EnsembleFamily::SymmetricIid => {
            for i in 0..d {
                for j in 0..i {
                    let x = spec.distribution.sample_rate(rng);
                    m[(i, j)] = x;
                    m[(j, i)] = x;
                }
            }
        }
        EnsembleFamily::RowColMeans => {
            let rows: Vec<f64> = (0..d).map(|_| spec.distribution.sample_rate(rng)).collect();
            let cols: Vec<f64> = (0..d).map(|_| spec.distribution.sample_rate(rng)).collect();
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        let mean = rows[i] + cols[j];
                        let e: f64 = Exp::new(1.0).unwrap().sample(rng);
                        m[(i, j)] = mean * e;
                    }
                }
            }
        }
        EnsembleFamily::FoldedCauchy => {
            let scale = match spec.distribution {
                BaseDistribution::Cauchy { scale } => scale,
                _ => 1.0,
            };
            let c = BaseDistribution::Cauchy { scale };
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        m[(i, j)] = c.sample_rate(rng);
                    }
                }
            }
        }
        EnsembleFamily::LogGaussian | EnsembleFamily::BridgeLogRates => {
            let logs = sample_log_rates(spec, rng);
            m = off_diagonal_from_vec(d, &logs).map(f64::exp);
            for i in 0..d {
                m[(i, i)] = 0.0;
            }
        }
    }
    RateMatrix::from_off_diagonal(m)
}

/// Direction with iid standard normal entries.
pub fn random_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(d, d, |_, _| StandardNormal.sample(rng))
}
