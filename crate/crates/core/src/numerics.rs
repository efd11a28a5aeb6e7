//! Dense linear-algebra primitives: symmetric eigendecomposition, matrix
//! exponential, PSD square root and a conditioned linear solve.
//!
//! Storage is `nalgebra::DMatrix<f64>`. [`SymmetricMatrix`] is a thin newtype
//! that symmetrizes on construction so downstream code can rely on exact
//! `m[(i, j)] == m[(j, i)]`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// General dense matrix.
pub type Matrix = DMatrix<f64>;

/// Dense column vector.
pub type Vector = DVector<f64>;

/// Errors raised by the linear-algebra layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e} below threshold {threshold:e})")]
    NotPsd { min_eigenvalue: f64, threshold: f64 },
    #[error("matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },
}

/// Largest condition number accepted by [`solve`].
pub const MAX_CONDITION: f64 = 1e12;

/// Relative clamping threshold for negative eigenvalues in [`psd_sqrt`].
pub const PSD_CLAMP_RTOL: f64 = 1e-10;

/// Absolute/relative hybrid comparison: `|x - y| <= atol + rtol * max(|x|, |y|)`.
pub fn approx_eq(x: f64, y: f64, atol: f64, rtol: f64) -> bool {
    (x - y).abs() <= atol + rtol * x.abs().max(y.abs())
}

/// [`approx_eq`] with the crate defaults `atol = 1e-12`, `rtol = 1e-8`.
pub fn approx_eq_default(x: f64, y: f64) -> bool {
    approx_eq(x, y, 1e-12, 1e-8)
}

/// A real symmetric matrix. The upper and lower triangles are averaged on
/// construction, so symmetry holds bit-for-bit afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(Matrix);

impl SymmetricMatrix {
    pub fn new(m: Matrix) -> Result<Self, NumericsError> {
        check_square(&m)?;
        check_finite(&m)?;
        Ok(Self(symmetrize(&m)))
    }

    pub fn identity(dim: usize) -> Self {
        Self(Matrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self, NumericsError> {
        Self::new(Matrix::from_diagonal(&Vector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

/// Eigendecomposition of a symmetric matrix with eigenvalues in ascending order.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, matching `eigenvalues`.
    pub eigenvectors: Matrix,
}

impl SymEigen {
    pub fn min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> f64 {
        *self.eigenvalues.last().expect("non-empty spectrum")
    }
}

pub(crate) fn check_square(m: &Matrix) -> Result<(), NumericsError> {
    if m.nrows() != m.ncols() {
        return Err(NumericsError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(())
}

pub(crate) fn check_finite(m: &Matrix) -> Result<(), NumericsError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite)
    }
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    let n = m.nrows();
    let mut out = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Symmetric eigendecomposition, eigenvalues ascending.
pub fn sym_eig(m: &SymmetricMatrix) -> Result<SymEigen, NumericsError> {
    check_finite(m.as_matrix())?;
    let eig = m.as_matrix().clone().symmetric_eigen();
    let n = m.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEigen { eigenvalues, eigenvectors })
}

/// Extreme eigenvalues `(λ_min, λ_max)` of the symmetric part `(m + mᵀ)/2`.
pub fn sym_part_extremes(m: &Matrix) -> Result<(f64, f64), NumericsError> {
    let eig = sym_eig(&SymmetricMatrix::new(m.clone())?)?;
    Ok((eig.min(), eig.max()))
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &Matrix) -> f64 {
    m.clone().singular_values().max()
}

/// Reassemble `V diag(f(λ)) Vᵀ`.
fn spectral_map(eig: &SymEigen, f: impl Fn(f64) -> f64) -> Matrix {
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let fk = f(lam);
        scaled.column_mut(k).scale_mut(fk);
    }
    &scaled * v.transpose()
}

/// Principal square root of a positive semidefinite matrix.
///
/// Eigenvalues in `[-1e-10·‖s‖, 0)` are treated as round-off and clamped to
/// zero; anything more negative is rejected.
pub fn psd_sqrt(s: &SymmetricMatrix) -> Result<SymmetricMatrix, NumericsError> {
    let eig = sym_eig(s)?;
    let threshold = -PSD_CLAMP_RTOL * s.norm();
    if eig.min() < threshold {
        return Err(NumericsError::NotPsd { min_eigenvalue: eig.min(), threshold });
    }
    SymmetricMatrix::new(spectral_map(&eig, |l| l.max(0.0).sqrt()))
}

/// Solve `a · x = b` by LU with partial pivoting.
///
/// The 2-norm condition number is estimated from singular values; systems with
/// an estimate above [`MAX_CONDITION`] are rejected.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    check_square(a)?;
    check_finite(a)?;
    check_finite(b)?;
    if b.nrows() != a.nrows() {
        return Err(NumericsError::DimensionMismatch { expected: a.nrows(), got: b.nrows() });
    }
    let condition = condition_number(a);
    if condition.is_nan() || condition > MAX_CONDITION {
        return Err(NumericsError::IllConditioned { condition });
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or(NumericsError::IllConditioned { condition: f64::INFINITY })
}

/// Inverse of a well-conditioned square matrix.
pub fn inverse(a: &Matrix) -> Result<Matrix, NumericsError> {
    solve(a, &Matrix::identity(a.nrows(), a.nrows()))
}

/// 2-norm condition number; `inf` for singular input.
pub fn condition_number(a: &Matrix) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

// Padé coefficients and 1-norm thresholds from Higham (2005).
const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA_13: f64 = 5.371920351148152;

fn one_norm(m: &Matrix) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a diagonal Padé
/// approximant of degree 3, 5, 7, 9 or 13 chosen from the 1-norm.
pub fn expm(a: &Matrix) -> Result<Matrix, NumericsError> {
    check_square(a)?;
    check_finite(a)?;
    let n = a.nrows();
    let ident = Matrix::identity(n, n);
    let norm = one_norm(a);

    for &(m, theta) in &THETA {
        if norm <= theta {
            let coeffs: &[f64] = match m {
                3 => &PADE_3,
                5 => &PADE_5,
                7 => &PADE_7,
                _ => &PADE_9,
            };
            let (u, v) = pade_low(a, coeffs, &ident);
            return pade_quotient(&u, &v);
        }
    }

    let s = if norm > THETA_13 { (norm / THETA_13).log2().ceil().max(0.0) as i32 } else { 0 };
    let scaled = a / 2f64.powi(s);
    let (u, v) = pade_13(&scaled, &ident);
    let mut r = pade_quotient(&u, &v)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

fn pade_low(a: &Matrix, b: &[f64], ident: &Matrix) -> (Matrix, Matrix) {
    let a2 = a * a;
    let mut even = ident.clone();
    let mut u_acc = ident * b[1];
    let mut v_acc = ident * b[0];
    let mut k = 2;
    while k < b.len() {
        even = &even * &a2;
        v_acc += &even * b[k];
        u_acc += &even * b[k + 1];
        k += 2;
    }
    (a * u_acc, v_acc)
}

fn pade_13(a: &Matrix, ident: &Matrix) -> (Matrix, Matrix) {
    let b = &PADE_13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + ident * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + ident * b[0];
    (u, v)
}

fn pade_quotient(u: &Matrix, v: &Matrix) -> Result<Matrix, NumericsError> {
    let p = v + u;
    let q = v - u;
    q.lu().solve(&p).ok_or(NumericsError::IllConditioned { condition: f64::INFINITY })
}
