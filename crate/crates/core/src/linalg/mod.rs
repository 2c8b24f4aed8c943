//! Dense linear algebra on `nalgebra` matrices: validated generators, the
//! matrix exponential, spectral decompositions and generalized inverses.

mod expm;
mod spectral;

pub use expm::{matrix_exponential, rate_transition};
pub use spectral::{
    d_minus, eigendecomposition, generalized_inverse, singular_values, DecompositionMode,
    GeneralizedInverse, SpectralDecomposition, DEFAULT_CONDITION_CAP,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type CMatrix = DMatrix<num_complex::Complex64>;

/// Matrix norms used by the error bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Frobenius,
    Operator,
}

impl NormKind {
    pub const ALL: [NormKind; 2] = [NormKind::Frobenius, NormKind::Operator];

    pub fn of(self, a: &Matrix) -> f64 {
        match self {
            NormKind::Frobenius => frobenius_norm(a),
            NormKind::Operator => operator_norm(a),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NormKind::Frobenius => "frobenius",
            NormKind::Operator => "operator",
        }
    }
}

/// Frobenius norm with rescaling, so entries near the underflow threshold
/// still produce a meaningful result.
pub fn frobenius_norm(a: &Matrix) -> f64 {
    let scale = a.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let ss: f64 = a.iter().map(|x| (x / scale).powi(2)).sum();
    scale * ss.sqrt()
}

/// Largest singular value.
pub fn operator_norm(a: &Matrix) -> f64 {
    let scale = a.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let scaled = a / scale;
    let sv = to_faer(&scaled)
        .singular_values()
        .expect("svd of a finite matrix converges");
    scale * sv.first().copied().unwrap_or(0.0)
}

pub(crate) fn to_faer(a: &Matrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

pub(crate) fn ensure_square(a: &Matrix) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    Ok(a.nrows())
}

/// A validated infinitesimal generator: non-negative off-diagonal rates and
/// a diagonal equal to the negative off-diagonal row sum.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    entries: Matrix,
}

impl RateMatrix {
    /// Build a generator from off-diagonal rates; the given diagonal is ignored.
    pub fn from_off_diagonal(mut rates: Matrix) -> Result<Self> {
        let d = ensure_square(&rates)?;
        if d == 0 {
            return Err(Error::InvalidArgument("rate matrix dimension must be >= 1".into()));
        }
        for i in 0..d {
            let mut off = 0.0;
            for j in 0..d {
                if i == j {
                    continue;
                }
                let q = rates[(i, j)];
                if !q.is_finite() {
                    return Err(Error::NonFinite("rate matrix entry"));
                }
                if q < 0.0 {
                    return Err(Error::NegativeOffDiagonal(i, j));
                }
                off += q;
            }
            rates[(i, i)] = -off;
        }
        Ok(Self { entries: rates })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.entries
    }

    pub fn into_matrix(self) -> Matrix {
        self.entries
    }

    /// Transition probabilities `exp(tQ)`.
    pub fn transition(&self, t: f64) -> Result<Matrix> {
        rate_transition(&self.entries, t)
    }

    pub fn is_symmetric(&self) -> bool {
        self.entries == self.entries.transpose()
    }

    /// Stationary distribution: the normalized left null vector of `Q`.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let d = self.dim();
        // Solve pi Q = 0 with sum(pi) = 1 by replacing one equation.
        let mut a = self.entries.transpose();
        for j in 0..d {
            a[(d - 1, j)] = 1.0;
        }
        let mut b = nalgebra::DVector::zeros(d);
        b[d - 1] = 1.0;
        let pi = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::InvalidArgument("generator is reducible".into()))?;
        Ok(pi.iter().map(|p| p.max(0.0)).collect())
    }
}

impl AsRef<Matrix> for RateMatrix {
    fn as_ref(&self) -> &Matrix {
        &self.entries
    }
}

/// Check that `raw` is a generator up to `tol` in each row sum and return it
/// with the diagonal reset to the exact negative off-diagonal row sums.
///
/// The reported residual is the signed amount by which the given diagonal
/// misses the off-diagonal row sum.
pub fn validate_rate_matrix(raw: &Matrix, tol: f64) -> Result<RateMatrix> {
    let d = ensure_square(raw)?;
    if d == 0 {
        return Err(Error::InvalidArgument("rate matrix dimension must be >= 1".into()));
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be non-negative, got {tol}")));
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("rate matrix entry"));
    }
    for i in 0..d {
        for j in 0..d {
            if i != j && raw[(i, j)] < 0.0 {
                return Err(Error::NegativeOffDiagonal(i, j));
            }
        }
    }
    for i in 0..d {
        let off: f64 = (0..d).filter(|&j| j != i).map(|j| raw[(i, j)]).sum();
        let residual = -(raw[(i, i)] + off);
        if residual.abs() > tol {
            return Err(Error::RowSumViolation(i, residual));
        }
    }
    RateMatrix::from_off_diagonal(raw.clone())
}
