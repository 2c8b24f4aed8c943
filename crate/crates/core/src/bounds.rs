//! Checkable error certificates for the first-order derivative surrogate and
//! its affine correction, plus singular-value band checks for random
//! generators.
//!
//! Every certificate compares a measured left-hand side against the bound's
//! right-hand side. Left-hand sides for the affine-corrected residuals are
//! evaluated in eigen-coordinates, where each entry has a closed form without
//! cancellation, so exponentially small residuals at large `t` are resolved
//! instead of drowning in roundoff.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{sample_rate_matrix, RateEnsembleSpec, SeededRng};
use crate::error::{Error, Result};
use crate::gradients::{error_matrix, exact_directional_derivative, ApproxMode};
use crate::linalg::{
    d_minus, eigendecomposition, generalized_inverse, matrix_exponential, singular_values, CMatrix,
    DecompositionMode, GeneralizedInverse, Matrix, NormKind, RateMatrix, SpectralDecomposition,
};

/// Relative slack applied when deciding whether a bound holds.
pub const CERTIFICATE_SLACK: f64 = 1e-9;

/// Tolerance for the generalized-inverse hypotheses.
pub const HYPOTHESIS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub theorem: String,
    pub norm: NormKind,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    pub constants: BTreeMap<String, f64>,
}

impl BoundCertificate {
    fn new(theorem: &str, norm: NormKind, t: f64, lhs: f64, rhs: f64, constants: BTreeMap<String, f64>) -> Self {
        let satisfied = lhs <= rhs * (1.0 + CERTIFICATE_SLACK);
        Self { theorem: theorem.to_string(), norm, t, lhs, rhs, satisfied, constants }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("certificate serializes")
    }
}

/// Decay constants with `||Q exp(tau Q)|| <= c0 exp(-kappa tau)` for `tau >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralGapConstants {
    pub c0: f64,
    pub kappa: f64,
    pub norm: NormKind,
}

impl SpectralGapConstants {
    /// User-supplied constants, e.g. for non-symmetric generators where no
    /// constructive recipe is available.
    pub fn new(c0: f64, kappa: f64, norm: NormKind) -> Result<Self> {
        if !(c0 > 0.0 && kappa > 0.0) {
            return Err(Error::InvalidArgument(format!("gap constants must be positive: C0={c0}, kappa={kappa}")));
        }
        Ok(Self { c0, kappa, norm })
    }

    /// Largest violation ratio `||Q exp(tau Q)|| / (c0 exp(-kappa tau))` over `taus`.
    pub fn decay_ratio(&self, q: &Matrix, taus: &[f64]) -> Result<f64> {
        let mut worst = 0.0_f64;
        for &tau in taus {
            let lhs = self.norm.of(&(q * matrix_exponential(q, tau)?));
            worst = worst.max(lhs / (self.c0 * (-self.kappa * tau).exp()));
        }
        Ok(worst)
    }
}

/// `e^x - x - 1` without cancellation at small `x`.
fn exp_minus_linear(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        let mut term = x * x / 2.0;
        let mut sum = 0.0;
        for k in 3..12 {
            sum += term;
            term *= x / k as f64;
        }
        sum
    } else {
        x.exp_m1() - x
    }
}

/// Certificate for `||E(t)|| <= (||J|| ||Q|| / 2)(e^{2t} - 2t - 1)`.
pub fn naive_bound(q: &Matrix, j: &Matrix, t: f64, norm: NormKind) -> Result<BoundCertificate> {
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("negative lag {t}")));
    }
    let lhs = error_matrix(q, j, t, ApproxMode::Naive, None)?.norms.get(norm);
    let jn = norm.of(j);
    let qn = norm.of(q);
    let rhs = jn * qn / 2.0 * exp_minus_linear(2.0 * t);
    let mut constants = BTreeMap::new();
    constants.insert("norm_J".into(), jn);
    constants.insert("norm_Q".into(), qn);
    Ok(BoundCertificate::new("naive", norm, t, lhs, rhs, constants))
}

struct SymmetricSpectrum {
    lambda: Vec<f64>,
    d_minus: usize,
}

fn symmetric_spectrum(decomp: &SpectralDecomposition) -> Result<SymmetricSpectrum> {
    if decomp.mode() != DecompositionMode::Symmetric {
        return Err(Error::NotSymmetric(f64::NAN));
    }
    let tol = decomp.default_kernel_tol();
    let dm = d_minus(decomp, tol)?;
    if dm == 0 {
        return Err(Error::AllZeroSpectrum);
    }
    Ok(SymmetricSpectrum { lambda: decomp.real_eigenvalues(), d_minus: dm })
}

/// Closed-form decay constants for symmetric non-positive `Q`:
/// Frobenius `C0 = sqrt(d_-) |lambda_1|`, operator `C0 = |lambda_1|`, and
/// `kappa = |lambda_{d_-}|` for both.
pub fn symmetric_gap_constants(decomp: &SpectralDecomposition, norm: NormKind) -> Result<SpectralGapConstants> {
    let s = symmetric_spectrum(decomp)?;
    let l1 = s.lambda[0].abs();
    let kappa = s.lambda[s.d_minus - 1].abs();
    let c0 = match norm {
        NormKind::Frobenius => (s.d_minus as f64).sqrt() * l1,
        NormKind::Operator => l1,
    };
    Ok(SpectralGapConstants { c0, kappa, norm })
}

/// `(e^z - 1 - z) / z` for complex `z`, stable near zero.
fn h_small(z: Complex64) -> Complex64 {
    let mut term = z / 2.0;
    let mut sum = Complex64::new(0.0, 0.0);
    for k in 3..20 {
        sum += term;
        term = term * z / k as f64;
    }
    sum
}

/// `int_0^t e^{(t-s)a} e^{sb} ds - t e^{ta}`, the `(k, l)` entry of
/// `grad_J exp(tQ) - t exp(tQ) J` per unit of `J` in eigen-coordinates.
fn first_order_gap(a: Complex64, b: Complex64, t: f64) -> Complex64 {
    let z = (b - a) * t;
    if z.norm() < 0.5 {
        (a * t).exp() * t * h_small(z)
    } else {
        ((b * t).exp() - (a * t).exp() - z * (a * t).exp()) / (b - a)
    }
}

/// Which residual to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Residual {
    /// `Q+J(I-QQ+) + (I-Q+Q)JQ+ + t(I-Q+Q)JQQ+ + grad_J e^{tQ} - t e^{tQ}J`.
    Full,
    /// `t(I-Q+Q)JQQ+ + grad_J e^{tQ} - t e^{tQ}J`, i.e. exact minus corrected.
    Corrected,
}

/// Residual in eigen-coordinates (kernel eigenvalues taken as exactly zero).
pub fn residual_eigen_coordinates(qplus: &GeneralizedInverse, j: &Matrix, t: f64, which: Residual) -> CMatrix {
    let dec = qplus.decomposition();
    let d = dec.dim();
    let lambda = dec.eigenvalues();
    let ker: Vec<bool> = (0..d).map(|k| qplus.in_kernel(k)).collect();
    let mut y = dec.to_eigenbasis(j);
    for k in 0..d {
        for l in 0..d {
            let factor = match (ker[k], ker[l]) {
                (true, true) => Complex64::new(0.0, 0.0),
                (false, true) => {
                    let a = lambda[k];
                    let e = (a * t).exp();
                    match which {
                        Residual::Full => e * (a.inv() - t),
                        Residual::Corrected => {
                            let expm1 = if a.im == 0.0 {
                                Complex64::new((a.re * t).exp_m1(), 0.0)
                            } else {
                                e - 1.0
                            };
                            expm1 / a - e * t
                        }
                    }
                }
                (true, false) => {
                    let b = lambda[l];
                    let e = (b * t).exp();
                    match which {
                        Residual::Full => e / b,
                        Residual::Corrected => {
                            let expm1 = if b.im == 0.0 {
                                Complex64::new((b.re * t).exp_m1(), 0.0)
                            } else {
                                e - 1.0
                            };
                            expm1 / b
                        }
                    }
                }
                (false, false) => first_order_gap(lambda[k], lambda[l], t),
            };
            y[(k, l)] *= factor;
        }
    }
    y
}

fn residual_norm(qplus: &GeneralizedInverse, y: &CMatrix, norm: NormKind) -> f64 {
    let dec = qplus.decomposition();
    if dec.mode() == DecompositionMode::Symmetric {
        // Orthogonal change of basis preserves both norms.
        norm.of(&y.map(|z| z.re))
    } else {
        norm.of(&dec.from_eigenbasis(y))
    }
}

/// Residual assembled from matrix products in the original coordinates.
/// Loses relative accuracy once the residual falls far below `||J||`.
pub fn residual_direct(q: &Matrix, qplus: &GeneralizedInverse, j: &Matrix, t: f64, which: Residual) -> Result<Matrix> {
    let d = q.nrows();
    let p = qplus.matrix();
    let proj = qplus.range_projector();
    let left = Matrix::identity(d, d) - proj;
    let mut r = exact_directional_derivative(q, j, t)? - matrix_exponential(q, t)? * j * t + (&left * j * proj) * t;
    if which == Residual::Full {
        r += p * j * &left + &left * j * p;
    }
    Ok(r)
}

fn thm1_constant(qplus: &GeneralizedInverse, j: &Matrix, c0: f64, norm: NormKind) -> f64 {
    let d = j.nrows();
    let p = qplus.matrix();
    let left = Matrix::identity(d, d) - qplus.range_projector();
    let p2 = p * p;
    c0 * (norm.of(&(&left * j * &p2)) + norm.of(&(&p2 * j * &left)) + norm.of(&(p * j)))
        + c0 * c0 * norm.of(&(p * j * p))
}

/// Certificate for the affine-corrected residual with generalized inverse
/// `qplus` and decay constants `gap`: `lhs <= C (1 + t) e^{-kappa t}`.
///
/// The second projector term enters with a plus sign, which is the sign under
/// which the residual actually decays.
pub fn thm1_certificate(
    q: &Matrix,
    qplus: &GeneralizedInverse,
    j: &Matrix,
    t: f64,
    gap: &SpectralGapConstants,
    norm: NormKind,
) -> Result<BoundCertificate> {
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("negative lag {t}")));
    }
    qplus.check_hypotheses(q, HYPOTHESIS_TOL)?;
    let y = residual_eigen_coordinates(qplus, j, t, Residual::Full);
    let lhs = residual_norm(qplus, &y, norm);
    let c = thm1_constant(qplus, j, gap.c0, norm);
    let rhs = c * (1.0 + t) * (-gap.kappa * t).exp();
    let mut constants = BTreeMap::new();
    constants.insert("C0".into(), gap.c0);
    constants.insert("kappa".into(), gap.kappa);
    constants.insert("C".into(), c);
    Ok(BoundCertificate::new("thm1", norm, t, lhs, rhs, constants))
}

/// Right-hand side variant for the symmetric bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum Thm2Variant {
    /// Constants read off the spectrum.
    Spectral,
    /// Constants from a band `mu1 d <= |lambda_{d-1}| <= |lambda_1| <= mu2 d`.
    Mu { mu1: f64, mu2: f64 },
}

/// Certificate for `||exact - corrected||` on symmetric non-positive `Q`.
pub fn thm2_certificate(q: &Matrix, j: &Matrix, t: f64, norm: NormKind, variant: Thm2Variant) -> Result<BoundCertificate> {
    let dec = eigendecomposition(q, DecompositionMode::Symmetric)?;
    let qplus = generalized_inverse(&dec, dec.default_kernel_tol())?;
    thm2_certificate_with(&qplus, j, t, norm, variant)
}

/// As [`thm2_certificate`] with a precomputed Moore-Penrose inverse.
pub fn thm2_certificate_with(
    qplus: &GeneralizedInverse,
    j: &Matrix,
    t: f64,
    norm: NormKind,
    variant: Thm2Variant,
) -> Result<BoundCertificate> {
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("negative lag {t}")));
    }
    let s = symmetric_spectrum(qplus.decomposition())?;
    let d = s.lambda.len();
    let dm = s.d_minus;
    let l1 = s.lambda[0].abs();
    let ldm = s.lambda[dm - 1].abs();
    let jn = norm.of(j);
    let y = residual_eigen_coordinates(qplus, j, t, Residual::Corrected);
    let lhs = residual_norm(qplus, &y, norm);

    let mut constants = BTreeMap::new();
    constants.insert("d_minus".into(), dm as f64);
    let df = d as f64;
    let rhs = match variant {
        Thm2Variant::Spectral => {
            let decay = (1.0 + t) * (-t * ldm).exp();
            constants.insert("kappa".into(), ldm);
            match norm {
                NormKind::Frobenius => {
                    let pf2: f64 = s.lambda[..dm].iter().map(|l| 1.0 / (l * l)).sum();
                    let pf = pf2.sqrt();
                    let ker = ((d - dm) as f64).sqrt();
                    let c0 = (dm as f64).sqrt() * l1;
                    let a = c0 * (2.0 * ker * pf2 + pf + c0 * pf2);
                    constants.insert("C0".into(), c0);
                    constants.insert("C".into(), a);
                    (a * decay + 2.0 * ker * pf) * jn
                }
                NormKind::Operator => {
                    let a = l1 * (2.0 + ldm + l1) / (ldm * ldm);
                    constants.insert("C0".into(), l1);
                    constants.insert("C".into(), a);
                    (a * decay + 2.0 / ldm) * jn
                }
            }
        }
        Thm2Variant::Mu { mu1, mu2 } => {
            if !(mu1 > 0.0 && mu1 <= mu2) {
                return Err(Error::MuHypothesisViolation(format!("need 0 < mu1 <= mu2, got {mu1}, {mu2}")));
            }
            if dm != d - 1 {
                return Err(Error::MuHypothesisViolation(format!(
                    "need a simple zero eigenvalue, found kernel dimension {}",
                    d - dm
                )));
            }
            let slack = 1e-12 * l1.max(1.0);
            if ldm + slack < mu1 * df || l1 > mu2 * df + slack {
                return Err(Error::MuHypothesisViolation(format!(
                    "band [{}, {}] does not contain |lambda_(d-1)| = {ldm}, |lambda_1| = {l1}",
                    mu1 * df,
                    mu2 * df
                )));
            }
            constants.insert("mu1".into(), mu1);
            constants.insert("mu2".into(), mu2);
            // Exponential factor (1 + t) e^{-t mu1 d}, matching the parent spectral bound.
            let decay = (1.0 + t) * (-t * mu1 * df).exp();
            match norm {
                NormKind::Frobenius => {
                    let a = mu2 / (mu1 * mu1) * (2.0 * df.sqrt() + mu1 * df + mu2 * df * df);
                    constants.insert("C".into(), a);
                    (a * decay + 2.0 / (mu1 * df.sqrt())) * jn
                }
                NormKind::Operator => {
                    let a = mu2 / (mu1 * mu1) * (2.0 / df + mu1 + mu2);
                    constants.insert("C".into(), a);
                    (a * decay + 2.0 / (mu1 * df)) * jn
                }
            }
        }
    };
    Ok(BoundCertificate::new("thm2", norm, t, lhs, rhs, constants))
}

/// Position of `sigma_2 / d` and `sigma_d / d` relative to the band
/// `mu +- c sqrt(log d / d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thm3Report {
    pub dim: usize,
    pub sigma2_over_d: f64,
    pub sigmad_over_d: f64,
    pub band_halfwidth: f64,
    pub inside: bool,
}

pub fn band_halfwidth(d: usize, c: f64) -> f64 {
    let df = d as f64;
    c * (df.ln() / df).sqrt()
}

pub fn thm3_certificate(q: &RateMatrix, mu: f64, c: f64) -> Result<Thm3Report> {
    let d = q.dim();
    if d < 2 {
        return Err(Error::InvalidArgument("singular-value band needs d >= 2".into()));
    }
    if !(mu > 0.0 && c > 0.0) {
        return Err(Error::InvalidArgument(format!("mu and c must be positive, got {mu}, {c}")));
    }
    let sv = singular_values(q.matrix())?;
    let df = d as f64;
    let s2 = sv[1] / df;
    let sd = sv[d - 1] / df;
    let hw = band_halfwidth(d, c);
    let within = |x: f64| (x - mu).abs() <= hw;
    Ok(Thm3Report { dim: d, sigma2_over_d: s2, sigmad_over_d: sd, band_halfwidth: hw, inside: within(s2) && within(sd) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub dim: usize,
    pub replicates: usize,
    pub inside: usize,
    pub band_halfwidth: f64,
    pub reports: Vec<Thm3Report>,
}

impl CoverageReport {
    pub fn frequency(&self) -> f64 {
        self.inside as f64 / self.replicates as f64
    }
}

/// Band coverage over seeded replicates; replicate `r` draws from stream `r`.
pub fn thm3_coverage(spec: &RateEnsembleSpec, mu: f64, c: f64, replicates: usize, seed: u64) -> Result<CoverageReport> {
    let reports: Vec<Result<Thm3Report>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let q = sample_rate_matrix(spec, &SeededRng::new(seed, r))?;
            thm3_certificate(&q, mu, c)
        })
        .collect();
    let reports: Vec<Thm3Report> = reports.into_iter().collect::<Result<_>>()?;
    let inside = reports.iter().filter(|r| r.inside).count();
    Ok(CoverageReport { dim: spec.dim, replicates, inside, band_halfwidth: band_halfwidth(spec.dim, c), reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::random_direction;
    use crate::gradients::Direction;
    use nalgebra::dmatrix;

    fn sym_sample(d: usize, seed: u64) -> Matrix {
        sample_rate_matrix(&RateEnsembleSpec::symmetric_exponential(d), &SeededRng::new(seed, 0))
            .unwrap()
            .into_matrix()
    }

    #[test]
    fn naive_bound_examples() {
        let q = dmatrix![-1.0, 1.0; 1.0, -1.0];
        let j = Direction::basis(2, 0, 1);
        let c = naive_bound(&q, &j, 0.0, NormKind::Frobenius).unwrap();
        assert_eq!(c.rhs, 0.0);
        assert!(c.lhs == 0.0 && c.satisfied);
        let mut prev = 0.0;
        for &t in &[0.5, 1.0, 2.0] {
            let c = naive_bound(&q, &j, t, NormKind::Frobenius).unwrap();
            assert!(c.satisfied, "{c:?}");
            assert!(c.rhs > prev);
            prev = c.rhs;
        }
    }

    #[test]
    fn exp_minus_linear_is_continuous() {
        for &x in &[0.0099f64, 0.01, 0.0101] {
            let direct = x.exp_m1() - x;
            assert!((exp_minus_linear(x) - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn gap_constant_examples() {
        let dec = eigendecomposition(&dmatrix![-1.0, 1.0; 1.0, -1.0], DecompositionMode::Symmetric).unwrap();
        let g = symmetric_gap_constants(&dec, NormKind::Frobenius).unwrap();
        assert!((g.c0 - 2.0).abs() < 1e-12 && (g.kappa - 2.0).abs() < 1e-12);
        let q = Matrix::from_diagonal(&nalgebra::dvector![-3.0, -1.0, 0.0]);
        let dec = eigendecomposition(&q, DecompositionMode::Symmetric).unwrap();
        let g = symmetric_gap_constants(&dec, NormKind::Operator).unwrap();
        assert!((g.c0 - 3.0).abs() < 1e-12 && (g.kappa - 1.0).abs() < 1e-12);
        let dec = eigendecomposition(&Matrix::zeros(2, 2), DecompositionMode::Symmetric).unwrap();
        assert_eq!(symmetric_gap_constants(&dec, NormKind::Operator).unwrap_err(), Error::AllZeroSpectrum);
    }

    #[test]
    fn gap_constants_bound_sampled_decay() {
        for seed in 0..5 {
            let q = sym_sample(6, seed);
            let dec = eigendecomposition(&q, DecompositionMode::Symmetric).unwrap();
            for norm in NormKind::ALL {
                let g = symmetric_gap_constants(&dec, norm).unwrap();
                let ratio = g.decay_ratio(&q, &[0.0, 0.5, 1.0, 2.0, 5.0]).unwrap();
                assert!(ratio <= 1.0 + 1e-9, "{norm:?}: {ratio}");
            }
        }
    }

    #[test]
    fn spectral_residual_matches_direct_assembly() {
        let mut rng = SeededRng::new(4, 0).rng();
        for &(sym, seed) in &[(true, 1u64), (false, 2u64)] {
            let spec = if sym {
                RateEnsembleSpec::symmetric_exponential(5)
            } else {
                RateEnsembleSpec::asymmetric_exponential(5)
            };
            let q = sample_rate_matrix(&spec, &SeededRng::new(seed, 0)).unwrap().into_matrix();
            let mode = if sym { DecompositionMode::Symmetric } else { DecompositionMode::General };
            let dec = eigendecomposition(&q, mode).unwrap();
            let qp = generalized_inverse(&dec, dec.default_kernel_tol()).unwrap();
            let j = random_direction(5, &mut rng);
            for &t in &[0.05, 0.3, 1.0] {
                for which in [Residual::Full, Residual::Corrected] {
                    let direct = residual_direct(&q, &qp, &j, t, which).unwrap();
                    let y = residual_eigen_coordinates(&qp, &j, t, which);
                    let spectral = dec.from_eigenbasis(&y);
                    assert!((direct - spectral).amax() < 1e-10, "sym={sym} t={t} {which:?}");
                }
            }
        }
    }

    #[test]
    fn thm1_negative_identity() {
        let q = -Matrix::identity(3, 3);
        let dec = eigendecomposition(&q, DecompositionMode::Symmetric).unwrap();
        let qp = generalized_inverse(&dec, dec.default_kernel_tol()).unwrap();
        let gap = symmetric_gap_constants(&dec, NormKind::Frobenius).unwrap();
        let j = dmatrix![0.0, 1.0, 2.0; -1.0, 0.5, 0.0; 3.0, 0.0, 1.0];
        let c = thm1_certificate(&q, &qp, &j, 2.0, &gap, NormKind::Frobenius).unwrap();
        assert_eq!(c.lhs, 0.0);
        assert!(c.satisfied);
    }

    #[test]
    fn thm1_random_symmetric_grid() {
        let q = sym_sample(8, 21);
        let dec = eigendecomposition(&q, DecompositionMode::Symmetric).unwrap();
        let qp = generalized_inverse(&dec, dec.default_kernel_tol()).unwrap();
        let j = random_direction(8, &mut SeededRng::new(21, 1).rng());
        for norm in NormKind::ALL {
            let gap = symmetric_gap_constants(&dec, norm).unwrap();
            for &t in &[0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
                let c = thm1_certificate(&q, &qp, &j, t, &gap, norm).unwrap();
                assert!(c.satisfied, "{c:?}");
            }
            let c = thm1_certificate(&q, &qp, &j, 50.0, &gap, norm).unwrap();
            assert!(c.lhs <= 1e-6);
        }
    }

    #[test]
    fn thm1_rejects_bad_inverse() {
        let q = dmatrix![-1.0, 1.0; 1.0, -1.0];
        // Treating the zero eigenvalue as invertible is impossible, so fake
        // a non-inverse by using a tiny kernel tolerance on a perturbed matrix.
        let qbad = dmatrix![-1.0, 1.0; 1.0, -1.000001];
        let dec = eigendecomposition(&qbad, DecompositionMode::Symmetric).unwrap();
        let qp = generalized_inverse(&dec, 1e-12).unwrap();
        let gap = SpectralGapConstants::new(2.0, 2.0, NormKind::Frobenius).unwrap();
        let err = thm1_certificate(&q, &qp, &Matrix::identity(2, 2), 1.0, &gap, NormKind::Frobenius).unwrap_err();
        assert!(matches!(err, Error::HypothesisViolation(_)), "{err:?}");
    }

    #[test]
    fn thm2_examples() {
        let q = -Matrix::identity(4, 4);
        let j = dmatrix![1.0, 2.0, 0.0, 0.0; 0.0, 0.0, 1.0, 0.0; 0.0, 0.0, 0.0, 1.0; 1.0, 0.0, 0.0, 0.0];
        for norm in NormKind::ALL {
            let c = thm2_certificate(&q, &j, 1.0, norm, Thm2Variant::Spectral).unwrap();
            assert_eq!(c.lhs, 0.0);
            assert!(c.satisfied);
        }
        let q = sym_sample(16, 5);
        let j = random_direction(16, &mut SeededRng::new(5, 1).rng());
        for norm in NormKind::ALL {
            for &t in &[0.1, 1.0, 10.0] {
                let c = thm2_certificate(&q, &j, t, norm, Thm2Variant::Spectral).unwrap();
                assert!(c.satisfied, "{c:?}");
            }
        }
        let asym = dmatrix![-1.0, 1.0; 0.0, 0.0];
        assert!(matches!(
            thm2_certificate(&asym, &j.view((0, 0), (2, 2)).into_owned(), 1.0, NormKind::Operator, Thm2Variant::Spectral),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn thm2_mu_variant_constant_term() {
        let d = 16;
        let q = sym_sample(d, 8);
        let dec = eigendecomposition(&q, DecompositionMode::Symmetric).unwrap();
        let qp = generalized_inverse(&dec, dec.default_kernel_tol()).unwrap();
        let l = dec.real_eigenvalues();
        let mu1 = l[d - 2].abs() / d as f64;
        let mu2 = l[0].abs() / d as f64;
        let j = random_direction(d, &mut SeededRng::new(8, 1).rng());
        let jf = NormKind::Frobenius.of(&j);
        // At very large t only the non-decaying term survives.
        let c = thm2_certificate_with(&qp, &j, 1e3, NormKind::Frobenius, Thm2Variant::Mu { mu1, mu2 }).unwrap();
        assert_eq!(c.rhs, 2.0 / (mu1 * (d as f64).sqrt()) * jf);
        assert!(c.satisfied);
        let err = thm2_certificate_with(&qp, &j, 1.0, NormKind::Frobenius, Thm2Variant::Mu { mu1: mu1 * 1.1, mu2 })
            .unwrap_err();
        assert!(matches!(err, Error::MuHypothesisViolation(_)));
    }

    #[test]
    fn thm3_constant_off_diagonal() {
        // All off-diagonals equal mu: eigenvalues 0 and -mu d (multiplicity d - 1).
        let d = 12;
        let mu = 0.7;
        let q = RateMatrix::from_off_diagonal(Matrix::from_element(d, d, mu)).unwrap();
        let sv = singular_values(q.matrix()).unwrap();
        for s in &sv[1..] {
            assert!((s - mu * d as f64).abs() < 1e-12);
        }
        let r = thm3_certificate(&q, mu, 0.1).unwrap();
        assert!(r.inside);
        assert!((r.sigma2_over_d - mu).abs() < 1e-13);
    }

    #[test]
    fn thm3_two_state() {
        let x = 0.8;
        let q = RateMatrix::from_off_diagonal(dmatrix![0.0, x; x, 0.0]).unwrap();
        let r = thm3_certificate(&q, 1.0, 0.1).unwrap();
        assert!((r.sigma2_over_d - x).abs() < 1e-14);
        let inside_expected = (x - 1.0f64).abs() <= 0.1 * (2f64.ln() / 2.0).sqrt();
        assert_eq!(r.inside, inside_expected);
        let r = thm3_certificate(&q, 1.0, 0.5).unwrap();
        assert!(r.inside);
    }

    #[test]
    fn band_shrinks_with_dimension() {
        assert!(band_halfwidth(256, 3.0) < band_halfwidth(64, 3.0));
    }

    #[test]
    fn certificate_json_shape() {
        let q = dmatrix![-1.0, 1.0; 1.0, -1.0];
        let c = naive_bound(&q, &Direction::basis(2, 0, 1), 1.0, NormKind::Operator).unwrap();
        let v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        for key in ["theorem", "norm", "t", "lhs", "rhs", "satisfied", "constants"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["norm"], "operator");
    }
}
