use serde::{Deserialize, Serialize};

use super::TransportError;
use crate::numerics::{self, Matrix, NumericsError, SymmetricMatrix, PSD_CLAMP_RTOL};

/// `N(mean, cov)` on ℝ^d.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    pub mean: Vec<f64>,
    pub cov: SymmetricMatrix,
}

impl GaussianLaw {
    /// Validates dimensions, finiteness and PSD-ness (up to clamping tolerance).
    pub fn new(mean: Vec<f64>, cov: SymmetricMatrix) -> Result<Self, NumericsError> {
        if mean.len() != cov.dim() {
            return Err(NumericsError::DimensionMismatch { expected: cov.dim(), got: mean.len() });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite);
        }
        let min = numerics::sym_eig(&cov)?.min();
        let threshold = -PSD_CLAMP_RTOL * cov.norm();
        if min < threshold {
            return Err(NumericsError::NotPsd { min_eigenvalue: min, threshold });
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Law of `scale·X + shift`.
    pub fn affine(&self, scale: f64, shift: &[f64]) -> Self {
        let mean = self.mean.iter().zip(shift).map(|(m, s)| scale * m + s).collect();
        let cov = SymmetricMatrix::new(self.cov.as_matrix() * (scale * scale)).expect("finite");
        Self { mean, cov }
    }
}

#[derive(Serialize, Deserialize)]
struct GaussianLawRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl Serialize for GaussianLaw {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let m = self.cov.as_matrix();
        let cov = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        GaussianLawRepr { mean: self.mean.clone(), cov }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for GaussianLaw {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = GaussianLawRepr::deserialize(d)?;
        let n = repr.cov.len();
        if repr.cov.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("covariance must be square"));
        }
        let cov = SymmetricMatrix::new(Matrix::from_fn(n, n, |i, j| repr.cov[i][j])).map_err(serde::de::Error::custom)?;
        GaussianLaw::new(repr.mean, cov).map_err(serde::de::Error::custom)
    }
}

/// Closed-form W2 between Gaussians:
/// `W2² = ‖m₁ − m₂‖² + tr(Σ₁ + Σ₂ − 2(Σ₂^{1/2} Σ₁ Σ₂^{1/2})^{1/2})`.
///
/// Bitwise-equal covariances short-circuit the trace term to zero.
pub fn w2_gaussian(a: &GaussianLaw, b: &GaussianLaw) -> Result<f64, TransportError> {
    if a.dim() != b.dim() {
        return Err(TransportError::ShapeMismatch { n_x: 1, d_x: a.dim(), n_y: 1, d_y: b.dim() });
    }
    let mean_sq: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let trace_term = if a.cov == b.cov {
        0.0
    } else {
        let root_b = numerics::psd_sqrt(&b.cov)?;
        let inner = SymmetricMatrix::new(root_b.as_matrix() * a.cov.as_matrix() * root_b.as_matrix())?;
        let cross = numerics::psd_sqrt(&inner)?;
        (a.cov.trace() + b.cov.trace() - 2.0 * cross.trace()).max(0.0)
    };
    Ok((mean_sq + trace_term).sqrt())
}
