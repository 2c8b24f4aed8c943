//! Eigendecompositions, spectral generalized inverses and singular values.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{ensure_square, frobenius_norm, matrix_exponential, operator_norm, to_faer, CMatrix, Matrix};
use crate::error::{Error, Result};

/// Default upper limit on the condition number of the eigenvector basis in
/// general mode.
pub const DEFAULT_CONDITION_CAP: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecompositionMode {
    Symmetric,
    General,
}

/// `A = M diag(lambda) M^-1`, eigenvalues ascending by real part, ties by
/// imaginary part and then original position.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    mode: DecompositionMode,
    eigenvalues: Vec<Complex64>,
    basis: CMatrix,
    inverse_basis: CMatrix,
    orthogonal: Option<Matrix>,
    scale: f64,
}

impl SpectralDecomposition {
    pub fn mode(&self) -> DecompositionMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    /// Real parts of the eigenvalues (exact eigenvalues in symmetric mode).
    pub fn real_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|z| z.re).collect()
    }

    pub fn basis(&self) -> &CMatrix {
        &self.basis
    }

    pub fn inverse_basis(&self) -> &CMatrix {
        &self.inverse_basis
    }

    /// The real orthonormal basis `U` of a symmetric decomposition.
    pub fn orthogonal_basis(&self) -> Option<&Matrix> {
        self.orthogonal.as_ref()
    }

    /// Operator norm of the decomposed matrix.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Kernel tolerance `1e-9 * max(1, sigma_max)`.
    pub fn default_kernel_tol(&self) -> f64 {
        1e-9 * self.scale.max(1.0)
    }

    /// `M f(Lambda) M^-1` for an elementwise spectral function, real part.
    pub fn apply(&self, f: impl Fn(Complex64) -> Complex64) -> Matrix {
        if let Some(u) = &self.orthogonal {
            let d = self.dim();
            let vals: Vec<f64> = self.eigenvalues.iter().map(|&z| f(z).re).collect();
            let mut scaled = u.clone();
            for j in 0..d {
                scaled.column_mut(j).scale_mut(vals[j]);
            }
            return scaled * u.transpose();
        }
        let mut scaled = self.basis.clone();
        for (j, &z) in self.eigenvalues.iter().enumerate() {
            let fz = f(z);
            scaled.column_mut(j).iter_mut().for_each(|x| *x *= fz);
        }
        (scaled * &self.inverse_basis).map(|z| z.re)
    }

    /// Reassemble `M diag(lambda) M^-1`.
    pub fn reconstruct(&self) -> Matrix {
        self.apply(|z| z)
    }

    /// Express a real matrix in the eigenbasis: `M^-1 X M`.
    pub fn to_eigenbasis(&self, x: &Matrix) -> CMatrix {
        if let Some(u) = &self.orthogonal {
            return (u.transpose() * x * u).map(|v| Complex64::new(v, 0.0));
        }
        let xc = x.map(|v| Complex64::new(v, 0.0));
        &self.inverse_basis * xc * &self.basis
    }

    /// Map a matrix from eigen-coordinates back: `M Y M^-1`, real part.
    pub fn from_eigenbasis(&self, y: &CMatrix) -> Matrix {
        if let Some(u) = &self.orthogonal {
            let yr = y.map(|v| v.re);
            return u * yr * u.transpose();
        }
        (&self.basis * y * &self.inverse_basis).map(|z| z.re)
    }
}

fn sort_order(vals: &[Complex64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| {
        vals[a]
            .re
            .total_cmp(&vals[b].re)
            .then(vals[a].im.total_cmp(&vals[b].im))
            .then(a.cmp(&b))
    });
    idx
}

/// Eigendecomposition with the default basis condition cap.
pub fn eigendecomposition(a: &Matrix, mode: DecompositionMode) -> Result<SpectralDecomposition> {
    eigendecomposition_capped(a, mode, DEFAULT_CONDITION_CAP)
}

pub fn eigendecomposition_capped(
    a: &Matrix,
    mode: DecompositionMode,
    condition_cap: f64,
) -> Result<SpectralDecomposition> {
    let d = ensure_square(a)?;
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("eigendecomposition input"));
    }
    match mode {
        DecompositionMode::Symmetric => symmetric(a, d),
        DecompositionMode::General => general(a, d, condition_cap),
    }
}

fn symmetric(a: &Matrix, d: usize) -> Result<SpectralDecomposition> {
    let norm = frobenius_norm(a);
    let asym = frobenius_norm(&(a - a.transpose()));
    if asym > 1e-10 * norm {
        return Err(Error::NotSymmetric(if norm > 0.0 { asym / norm } else { asym }));
    }
    let sym = (a + a.transpose()) * 0.5;
    let evd = to_faer(&sym)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|_| Error::NoConvergence)?;
    let s = evd.S();
    let u = evd.U();
    let raw: Vec<Complex64> = (0..d).map(|i| Complex64::new(s[i], 0.0)).collect();
    let order = sort_order(&raw);
    let eigenvalues: Vec<Complex64> = order.iter().map(|&i| raw[i]).collect();
    let orth = Matrix::from_fn(d, d, |i, j| u[(i, order[j])]);
    let basis = orth.map(|v| Complex64::new(v, 0.0));
    let inverse_basis = basis.transpose();
    let scale = eigenvalues.iter().fold(0.0_f64, |m, z| m.max(z.re.abs()));
    Ok(SpectralDecomposition {
        mode: DecompositionMode::Symmetric,
        eigenvalues,
        basis,
        inverse_basis,
        orthogonal: Some(orth),
        scale,
    })
}

fn general(a: &Matrix, d: usize, condition_cap: f64) -> Result<SpectralDecomposition> {
    let evd = to_faer(a).eigen().map_err(|_| Error::NoConvergence)?;
    let s = evd.S();
    let u = evd.U();
    let raw: Vec<Complex64> = (0..d).map(|i| s[i]).collect();
    let order = sort_order(&raw);
    let eigenvalues: Vec<Complex64> = order.iter().map(|&i| raw[i]).collect();
    let mut basis: CMatrix = DMatrix::from_fn(d, d, |i, j| u[(i, order[j])]);
    for mut col in basis.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col.unscale_mut(n);
        }
    }
    let cond = complex_condition(&basis);
    if !(cond <= condition_cap) {
        return Err(Error::IllConditionedBasis(cond));
    }
    let inverse_basis = basis
        .clone()
        .try_inverse()
        .ok_or(Error::IllConditionedBasis(f64::INFINITY))?;
    Ok(SpectralDecomposition {
        mode: DecompositionMode::General,
        eigenvalues,
        basis,
        inverse_basis,
        orthogonal: None,
        scale: operator_norm(a),
    })
}

fn complex_condition(m: &CMatrix) -> f64 {
    let f = faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    match f.singular_values() {
        Ok(sv) => {
            let max = sv.first().copied().unwrap_or(0.0);
            let min = sv.last().copied().unwrap_or(0.0);
            if min > 0.0 {
                max / min
            } else {
                f64::INFINITY
            }
        }
        Err(_) => f64::INFINITY,
    }
}

/// Spectral generalized inverse `M Lambda^+ M^-1`; the Moore-Penrose inverse
/// in symmetric mode.
#[derive(Debug, Clone)]
pub struct GeneralizedInverse {
    entries: Matrix,
    range_projector: Matrix,
    kernel_tol: f64,
    kernel_dim: usize,
    decomposition: SpectralDecomposition,
}

impl GeneralizedInverse {
    pub fn matrix(&self) -> &Matrix {
        &self.entries
    }

    /// `Q Q^+`, assembled spectrally.
    pub fn range_projector(&self) -> &Matrix {
        &self.range_projector
    }

    /// `I - Q Q^+`.
    pub fn kernel_projector(&self) -> Matrix {
        let d = self.entries.nrows();
        Matrix::identity(d, d) - &self.range_projector
    }

    pub fn kernel_tol(&self) -> f64 {
        self.kernel_tol
    }

    /// Number of eigenvalues mapped to zero.
    pub fn kernel_dim(&self) -> usize {
        self.kernel_dim
    }

    pub fn decomposition(&self) -> &SpectralDecomposition {
        &self.decomposition
    }

    /// Whether eigenvalue `k` (in sorted order) was treated as kernel.
    pub fn in_kernel(&self, k: usize) -> bool {
        self.decomposition.eigenvalues[k].norm() <= self.kernel_tol
    }

    /// Check `Q+ Q Q+ = Q+`, `Q Q+ = Q+ Q` and the projector invariance
    /// `exp(tau Q)(I - Q+ Q) = I - Q+ Q` at a few lags, all within `tol`
    /// relative to the size of the terms involved.
    pub fn check_hypotheses(&self, q: &Matrix, tol: f64) -> Result<()> {
        let p = &self.entries;
        let scale_p = p.amax().max(1.0);
        if (p * q * p - p).amax() > tol * scale_p * scale_p * q.amax().max(1.0) {
            return Err(Error::HypothesisViolation("Q+ Q Q+ = Q+"));
        }
        let qp = q * p;
        let pq = p * q;
        if (&qp - &pq).amax() > tol * scale_p * q.amax().max(1.0) {
            return Err(Error::HypothesisViolation("Q Q+ = Q+ Q"));
        }
        let d = q.nrows();
        let id = Matrix::identity(d, d);
        let right = &id - &pq;
        let left = &id - &qp;
        for &tau in &[0.25, 1.0, 4.0] {
            let e = matrix_exponential(q, tau)?;
            let slack = tol * e.amax().max(1.0) * right.amax().max(1.0);
            if (&e * &right - &right).amax() > slack || (&left * &e - &left).amax() > slack {
                return Err(Error::HypothesisViolation("exp(tau Q)(I - Q+ Q) = I - Q+ Q"));
            }
        }
        Ok(())
    }
}

/// Invert every eigenvalue with modulus above `kernel_tol`, send the rest to 0.
pub fn generalized_inverse(decomp: &SpectralDecomposition, kernel_tol: f64) -> Result<GeneralizedInverse> {
    if !(kernel_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("kernel tolerance must be positive, got {kernel_tol}")));
    }
    let inv = |z: Complex64| {
        if z.norm() <= kernel_tol {
            Complex64::new(0.0, 0.0)
        } else {
            z.inv()
        }
    };
    let indicator = |z: Complex64| {
        if z.norm() <= kernel_tol {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(1.0, 0.0)
        }
    };
    let entries = decomp.apply(inv);
    let range_projector = decomp.apply(indicator);
    let kernel_dim = decomp.eigenvalues.iter().filter(|z| z.norm() <= kernel_tol).count();
    Ok(GeneralizedInverse {
        entries,
        range_projector,
        kernel_tol,
        kernel_dim,
        decomposition: decomp.clone(),
    })
}

/// Singular values in ascending order.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    ensure_square(a)?;
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("singular value input"));
    }
    let scale = a.amax();
    if scale == 0.0 {
        return Ok(vec![0.0; a.nrows()]);
    }
    let mut sv = to_faer(&(a / scale))
        .singular_values()
        .map_err(|_| Error::NoConvergence)?;
    sv.reverse();
    Ok(sv.into_iter().map(|s| s * scale).collect())
}

/// Number of eigenvalues with real part below `-tol`; with ascending order
/// this is the index of the largest strictly negative eigenvalue.
pub fn d_minus(decomp: &SpectralDecomposition, tol: f64) -> Result<usize> {
    if let Some(z) = decomp.eigenvalues.iter().find(|z| z.re > tol) {
        return Err(Error::PositiveEigenvalue(z.re));
    }
    Ok(decomp.eigenvalues.iter().filter(|z| z.re < -tol).count())
}
