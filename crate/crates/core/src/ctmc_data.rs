//! Endpoint-observed CTMC data: simulation, likelihood and log-rate gradients.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{off_diagonal_from_vec, off_diagonal_to_vec};
use crate::error::{Error, Result};
use crate::gradients::{adjoint_derivative, compensated_rate_gradient, generator_inverse, GradMode};
use crate::linalg::{rate_transition, Matrix, RateMatrix};

/// One observed transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointPair {
    pub initial: usize,
    pub r#final: usize,
    pub lag: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointDataset {
    dim: usize,
    pairs: Vec<EndpointPair>,
}

impl EndpointDataset {
    pub fn new(dim: usize, pairs: Vec<EndpointPair>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dataset dimension must be >= 1".into()));
        }
        for (n, p) in pairs.iter().enumerate() {
            if p.initial >= dim || p.r#final >= dim {
                return Err(Error::InvalidArgument(format!("pair {n}: state index out of range for d = {dim}")));
            }
            if !(p.lag > 0.0 && p.lag.is_finite()) {
                return Err(Error::InvalidArgument(format!("pair {n}: lag must be positive, got {}", p.lag)));
            }
        }
        Ok(Self { dim, pairs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pairs(&self) -> &[EndpointPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn concat(&self, other: &EndpointDataset) -> Result<EndpointDataset> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let mut pairs = self.pairs.clone();
        pairs.extend_from_slice(&other.pairs);
        Ok(Self { dim: self.dim, pairs })
    }

    /// Pair indices grouped by lag, in increasing lag order.
    fn by_lag(&self) -> Vec<(f64, Vec<usize>)> {
        let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (n, p) in self.pairs.iter().enumerate() {
            groups.entry(p.lag.to_bits()).or_default().push(n);
        }
        groups.into_iter().map(|(bits, idx)| (f64::from_bits(bits), idx)).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        for p in &self.pairs {
            w.serialize(p).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read `initial,final,lag` rows; `dim` bounds the state indices.
    pub fn read_csv(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
        let mut pairs = Vec::new();
        for (line, rec) in r.deserialize().enumerate() {
            let p: EndpointPair = rec.map_err(|e| Error::Parse { position: line + 2, expected: e.to_string() })?;
            pairs.push(p);
        }
        Self::new(dim, pairs)
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        other => Error::Parse { position: 0, expected: format!("{other:?}") },
    }
}

/// Uniform initial states and final states drawn from the matching row of
/// `exp(tQ)`.
pub fn simulate_endpoints<R: Rng + ?Sized>(q: &RateMatrix, t: f64, n: usize, rng: &mut R) -> Result<EndpointDataset> {
    if !(t > 0.0) || n == 0 {
        return Err(Error::InvalidArgument(format!("need t > 0 and n >= 1, got t = {t}, n = {n}")));
    }
    let d = q.dim();
    let p = q.transition(t)?;
    let rows: Vec<WeightedIndex<f64>> = (0..d)
        .map(|i| {
            WeightedIndex::new(p.row(i).iter().map(|x| x.max(0.0)))
                .map_err(|e| Error::InvalidArgument(format!("transition row {i}: {e}")))
        })
        .collect::<Result<_>>()?;
    let pairs = (0..n)
        .map(|_| {
            let initial = rng.random_range(0..d);
            let r#final = rows[initial].sample(rng);
            EndpointPair { initial, r#final, lag: t }
        })
        .collect();
    EndpointDataset::new(d, pairs)
}

fn check_dim(q: &Matrix, data: &EndpointDataset) -> Result<()> {
    if q.nrows() != data.dim {
        return Err(Error::DimensionMismatch { expected: data.dim, got: q.nrows() });
    }
    Ok(())
}

/// Transition matrices for each distinct lag, computed in parallel.
fn transitions(q: &Matrix, groups: &[(f64, Vec<usize>)]) -> Result<Vec<Matrix>> {
    groups.par_iter().map(|(lag, _)| rate_transition(q, *lag)).collect()
}

fn pair_probability(p: &Matrix, pair: &EndpointPair, index: usize) -> Result<f64> {
    let prob = p[(pair.initial, pair.r#final)];
    if prob > 0.0 {
        Ok(prob)
    } else {
        Err(Error::ZeroProbabilityTransition { index, prob })
    }
}

/// Pairwise summation in a fixed tree order.
pub(crate) fn pairwise_sum(x: &[f64]) -> f64 {
    match x.len() {
        0 => 0.0,
        1 => x[0],
        n => pairwise_sum(&x[..n / 2]) + pairwise_sum(&x[n / 2..]),
    }
}

/// `sum_n log [exp(t_n Q)]_{y0_n, y1_n}`.
pub fn endpoint_loglik(q: &RateMatrix, data: &EndpointDataset) -> Result<f64> {
    check_dim(q.matrix(), data)?;
    let groups = data.by_lag();
    let ps = transitions(q.matrix(), &groups)?;
    let mut terms = vec![0.0; data.len()];
    for ((_, idx), p) in groups.iter().zip(&ps) {
        for &n in idx {
            terms[n] = pair_probability(p, &data.pairs[n], n)?.ln();
        }
    }
    Ok(pairwise_sum(&terms))
}

/// Generator with off-diagonal rates `exp(theta)`, row-major over `i != j`.
pub fn rate_matrix_from_log_rates(d: usize, theta: &[f64]) -> Result<RateMatrix> {
    if theta.len() != d * (d - 1) {
        return Err(Error::DimensionMismatch { expected: d * (d - 1), got: theta.len() });
    }
    let rates = off_diagonal_from_vec(d, theta).map(f64::exp);
    let rates = Matrix::from_fn(d, d, |i, j| if i == j { 0.0 } else { rates[(i, j)] });
    if rates.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("rate overflow"));
    }
    RateMatrix::from_off_diagonal(rates)
}

/// Log-likelihood and its gradient over log-rates `theta`, with the
/// derivative of each transition matrix taken by `mode`.
pub fn endpoint_loglik_and_grad(theta: &[f64], data: &EndpointDataset, mode: GradMode) -> Result<(f64, Vec<f64>)> {
    let d = data.dim;
    let q = rate_matrix_from_log_rates(d, theta)?;
    let q = q.matrix();
    let groups = data.by_lag();
    let ps = transitions(q, &groups)?;
    let qplus = if mode == GradMode::Corrected { Some(generator_inverse(q)?) } else { None };

    let mut terms = vec![0.0; data.len()];
    let mut weights = Vec::with_capacity(groups.len());
    for ((_, idx), p) in groups.iter().zip(&ps) {
        let mut w = Matrix::zeros(d, d);
        for &n in idx {
            let pair = &data.pairs[n];
            let prob = pair_probability(p, pair, n)?;
            terms[n] = prob.ln();
            w[(pair.initial, pair.r#final)] += 1.0 / prob;
        }
        weights.push(w);
    }
    let adjoints: Vec<Matrix> = groups
        .par_iter()
        .zip(ps.par_iter())
        .zip(weights.par_iter())
        .map(|(((lag, _), p), w)| adjoint_derivative(q, w, *lag, mode, Some(p), qplus.as_ref()))
        .collect::<Result<_>>()?;
    let mut g = Matrix::zeros(d, d);
    for a in &adjoints {
        g += a;
    }
    let g = compensated_rate_gradient(&g);
    let grad = off_diagonal_to_vec(&g.component_mul(q));
    Ok((pairwise_sum(&terms), grad))
}

pub fn endpoint_loglik_grad(theta: &[f64], data: &EndpointDataset, mode: GradMode) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Ok(vec![0.0; theta.len()]);
    }
    endpoint_loglik_and_grad(theta, data, mode).map(|(_, g)| g)
}
