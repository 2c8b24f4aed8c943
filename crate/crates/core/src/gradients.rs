//! Directional derivatives of `exp(tQ)`: the exact Fréchet derivative, the
//! first-order surrogate `t exp(tQ) J`, and its affine correction.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    eigendecomposition, ensure_square, frobenius_norm, generalized_inverse, matrix_exponential, operator_norm,
    CMatrix, DecompositionMode, GeneralizedInverse, Matrix, NormKind, SpectralDecomposition,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionTag {
    Basis(usize, usize),
    Dense,
}

/// A perturbation direction `J` in the space of `d x d` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    entries: Matrix,
    tag: DirectionTag,
}

impl Direction {
    /// Natural basis element with a single 1 at `(i, j)`.
    pub fn basis(d: usize, i: usize, j: usize) -> Self {
        assert!(i < d && j < d, "basis index ({i}, {j}) out of range for dimension {d}");
        let mut entries = Matrix::zeros(d, d);
        entries[(i, j)] = 1.0;
        Self { entries, tag: DirectionTag::Basis(i, j) }
    }

    pub fn dense(entries: Matrix) -> Self {
        Self { entries, tag: DirectionTag::Dense }
    }

    pub fn tag(&self) -> DirectionTag {
        self.tag
    }

    pub fn matrix(&self) -> &Matrix {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }
}

impl std::ops::Deref for Direction {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.entries
    }
}

fn conformable(q: &Matrix, j: &Matrix) -> Result<usize> {
    let d = ensure_square(q)?;
    let dj = ensure_square(j)?;
    if d != dj {
        return Err(Error::DimensionMismatch { expected: d, got: dj });
    }
    Ok(d)
}

/// `grad_J exp(tQ) = int_0^t exp((t-s)Q) J exp(sQ) ds`, read off the
/// upper-right block of `exp(t [[Q, J], [0, Q]])`.
pub fn exact_directional_derivative(q: &Matrix, j: &Matrix, t: f64) -> Result<Matrix> {
    let d = conformable(q, j)?;
    let mut block = Matrix::zeros(2 * d, 2 * d);
    block.view_mut((0, 0), (d, d)).copy_from(q);
    block.view_mut((d, d), (d, d)).copy_from(q);
    block.view_mut((0, d), (d, d)).copy_from(j);
    let e = matrix_exponential(&block, t)?;
    Ok(e.view((0, d), (d, d)).into_owned())
}

/// `(exp(z) - 1) / z`, accurate near zero.
pub(crate) fn phi1(z: Complex64) -> Complex64 {
    if z.im == 0.0 {
        let x = z.re;
        return Complex64::new(if x == 0.0 { 1.0 } else { x.exp_m1() / x }, 0.0);
    }
    if z.norm() < 1e-3 {
        Complex64::new(1.0, 0.0) + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    } else {
        (z.exp() - 1.0) / z
    }
}

/// Divided difference `int_0^t exp((t-s)a + s b) ds`, factored around the
/// eigenvalue with the larger real part so nothing overflows.
pub(crate) fn divided_difference(a: Complex64, b: Complex64, t: f64) -> Complex64 {
    let (hi, lo) = if a.re >= b.re { (a, b) } else { (b, a) };
    (hi * t).exp() * t * phi1((lo - hi) * t)
}

/// Exact derivative through an existing eigendecomposition of `Q`:
/// `M ((M^-1 J M) o Phi) M^-1` with divided differences `Phi`.
pub fn spectral_directional_derivative(
    decomp: &SpectralDecomposition,
    j: &Matrix,
    t: f64,
) -> Result<Matrix> {
    let d = decomp.dim();
    if j.nrows() != d || j.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: j.nrows() });
    }
    let lambda = decomp.eigenvalues();
    let mut y: CMatrix = decomp.to_eigenbasis(j);
    for k in 0..d {
        for l in 0..d {
            y[(k, l)] *= divided_difference(lambda[k], lambda[l], t);
        }
    }
    let out = decomp.from_eigenbasis(&y);
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("spectral derivative"));
    }
    Ok(out)
}

/// Truncated derivative series
/// `exp(tQ) sum_{n<=n_max} t^{n+1}/(n+1)! sum_l (-1)^l C(n,l) Q^l J Q^{n-l}`.
///
/// Reference implementation used to check the other routes; it is only
/// reliable while `t ||Q||` is moderate.
pub fn series_derivative_oracle(q: &Matrix, j: &Matrix, t: f64, n_max: usize) -> Result<Matrix> {
    let d = conformable(q, j)?;
    let mut q_pows = vec![Matrix::identity(d, d)];
    for _ in 0..n_max {
        let next = q_pows.last().unwrap() * q;
        q_pows.push(next);
    }
    let mut sum = Matrix::zeros(d, d);
    let mut coef = t; // t^{n+1}/(n+1)!
    for n in 0..=n_max {
        if n > 0 {
            coef *= t / (n as f64 + 1.0);
        }
        let mut inner = Matrix::zeros(d, d);
        let mut binom = 1.0;
        for l in 0..=n {
            if l > 0 {
                binom = binom * (n - l + 1) as f64 / l as f64;
            }
            let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
            inner += (&q_pows[l] * j * &q_pows[n - l]) * (sign * binom);
        }
        sum += inner * coef;
    }
    let out = matrix_exponential(q, t)? * sum;
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("derivative series overflow"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApproxMode {
    Naive,
    Corrected,
}

/// Gradient route used by likelihood code: exact or one of the surrogates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradMode {
    Exact,
    Naive,
    Corrected,
}

impl GradMode {
    pub const ALL: [GradMode; 3] = [GradMode::Exact, GradMode::Naive, GradMode::Corrected];

    pub fn name(self) -> &'static str {
        match self {
            GradMode::Exact => "exact",
            GradMode::Naive => "naive",
            GradMode::Corrected => "corrected",
        }
    }
}

impl std::str::FromStr for GradMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(GradMode::Exact),
            "naive" => Ok(GradMode::Naive),
            "corrected" => Ok(GradMode::Corrected),
            other => Err(Error::InvalidArgument(format!("unknown gradient mode `{other}`"))),
        }
    }
}

/// Affine correction `t (I - Q+ Q) J Q Q+`.
pub fn affine_correction(qplus: &GeneralizedInverse, j: &Matrix, t: f64) -> Matrix {
    let proj = qplus.range_projector();
    let d = proj.nrows();
    let left = Matrix::identity(d, d) - proj;
    (left * j * proj) * t
}

/// First-order surrogate `t exp(tQ) J`, optionally minus the affine correction.
pub fn approx_derivative(
    q: &Matrix,
    j: &Matrix,
    t: f64,
    mode: ApproxMode,
    qplus: Option<&GeneralizedInverse>,
) -> Result<Matrix> {
    conformable(q, j)?;
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("negative lag {t}")));
    }
    let naive = matrix_exponential(q, t)? * j * t;
    match mode {
        ApproxMode::Naive => Ok(naive),
        ApproxMode::Corrected => {
            let qplus = qplus.ok_or(Error::MissingGeneralizedInverse)?;
            Ok(naive - affine_correction(qplus, j, t))
        }
    }
}

/// Frobenius and operator norms of one matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormPair {
    pub frobenius: f64,
    pub operator: f64,
}

impl NormPair {
    pub fn of(m: &Matrix) -> Self {
        Self { frobenius: frobenius_norm(m), operator: operator_norm(m) }
    }

    pub fn get(&self, kind: NormKind) -> f64 {
        match kind {
            NormKind::Frobenius => self.frobenius,
            NormKind::Operator => self.operator,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ErrorMatrix {
    pub matrix: Matrix,
    pub norms: NormPair,
}

/// `exact - approximation` and its norms.
pub fn error_matrix(
    q: &Matrix,
    j: &Matrix,
    t: f64,
    mode: ApproxMode,
    qplus: Option<&GeneralizedInverse>,
) -> Result<ErrorMatrix> {
    let approx = approx_derivative(q, j, t, mode, qplus)?;
    let matrix = exact_directional_derivative(q, j, t)? - approx;
    let norms = NormPair::of(&matrix);
    Ok(ErrorMatrix { matrix, norms })
}

/// Exact, naive and corrected derivatives at one lag with their errors.
#[derive(Debug, Clone)]
pub struct DerivativeBundle {
    pub t: f64,
    pub exact: Matrix,
    pub naive: Matrix,
    pub corrected: Matrix,
    pub error_naive: NormPair,
    pub error_corrected: NormPair,
}

impl DerivativeBundle {
    pub fn compute(q: &Matrix, j: &Matrix, t: f64, qplus: &GeneralizedInverse) -> Result<Self> {
            conformable(q, j)?;
        if t < 0.0 {
            return Err(Error::InvalidArgument(format!("negative lag {t}")));
        }
        let exact = exact_directional_derivative(q, j, t)?;
        let naive = matrix_exponential(q, t)? * j * t;
        let corrected = &naive - affine_correction(qplus, j, t);
        let error_naive = NormPair::of(&(&exact - &naive));
        let error_corrected = NormPair::of(&(&exact - &corrected));
        Ok(Self { t, exact, naive, corrected, error_naive, error_corrected })
    }

    pub fn dim(&self) -> usize {
        self.exact.nrows()
    }
}

/// Derivatives of `exp(tQ)` in all `d^2` basis directions, sharing one
/// exponential and one decomposition. Entry `i * d + j` holds the derivative
/// in direction `J_ij`.
pub fn basis_derivatives(
    q: &Matrix,
    t: f64,
    mode: GradMode,
    decomp: Option<&SpectralDecomposition>,
    qplus: Option<&GeneralizedInverse>,
) -> Result<Vec<Matrix>> {
    let d = ensure_square(q)?;
    match mode {
        GradMode::Exact => {
            let out: Vec<Result<Matrix>> = (0..d * d)
                .into_par_iter()
                .map(|idx| {
                    let dir = Direction::basis(d, idx / d, idx % d);
                    match decomp {
                        Some(dec) => spectral_directional_derivative(dec, &dir, t),
                        None => exact_directional_derivative(q, &dir, t),
                    }
                })
                .collect();
            out.into_iter().collect()
        }
        GradMode::Naive | GradMode::Corrected => {
            let p = matrix_exponential(q, t)?;
            let correction = if mode == GradMode::Corrected {
                let qp = qplus.ok_or(Error::MissingGeneralizedInverse)?;
                let proj = qp.range_projector().clone();
                let left = Matrix::identity(d, d) - &proj;
                Some((left, proj))
            } else {
                None
            };
            Ok((0..d * d)
                .into_par_iter()
                .map(|idx| {
                    let (i, j) = (idx / d, idx % d);
                    // t exp(tQ) J_ij has column j equal to t * column i of exp(tQ).
                    let mut m = DMatrix::zeros(d, d);
                    m.column_mut(j).copy_from(&(p.column(i) * t));
                    if let Some((left, proj)) = &correction {
                        // t (I - Q+Q) e_i e_j^T (QQ+)
                        let c = left.column(i) * proj.row(j) * t;
                        m -= c;
                    }
                    m
                })
                .collect())
        }
    }
}

/// Adjoint of a derivative route: the matrix `G` with
/// `<W, D_J exp(sQ)> = <G, J>` for every direction `J`, where `D_J` is the
/// exact derivative or one of the surrogates.
///
/// `p` is `exp(sQ)` if already available; `qplus` is required for the
/// corrected surrogate.
pub fn adjoint_derivative(
    q: &Matrix,
    w: &Matrix,
    s: f64,
    mode: GradMode,
    p: Option<&Matrix>,
    qplus: Option<&GeneralizedInverse>,
) -> Result<Matrix> {
    let d = conformable(q, w)?;
    match mode {
        GradMode::Exact => exact_directional_derivative(&q.transpose(), w, s),
        GradMode::Naive | GradMode::Corrected => {
            let owned;
            let p = match p {
                Some(p) => p,
                None => {
                    owned = matrix_exponential(q, s)?;
                    &owned
                }
            };
            let mut g = p.tr_mul(w) * s;
            if mode == GradMode::Corrected {
                let proj = qplus.ok_or(Error::MissingGeneralizedInverse)?.range_projector();
                let left = Matrix::identity(d, d) - proj;
                g -= left.tr_mul(w) * proj.transpose() * s;
            }
            Ok(g)
        }
    }
}

/// Generalized inverse of a generator, using the symmetric route when `Q` is
/// exactly symmetric.
pub fn generator_inverse(q: &Matrix) -> Result<GeneralizedInverse> {
    let mode = if q == &q.transpose() { DecompositionMode::Symmetric } else { DecompositionMode::General };
    let dec = eigendecomposition(q, mode)?;
    let tol = dec.default_kernel_tol();
    generalized_inverse(&dec, tol)
}

/// Gradient over off-diagonal rates from a gradient `G` over unconstrained
/// entries: moving `q_ij` also moves `q_ii` by the same amount in the other
/// direction, so the result is `G_ij - G_ii` (zero on the diagonal).
pub fn compensated_rate_gradient(g: &Matrix) -> Matrix {
    let d = g.nrows();
    Matrix::from_fn(d, d, |i, j| if i == j { 0.0 } else { g[(i, j)] - g[(i, i)] })
}
