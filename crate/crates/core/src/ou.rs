//! Closed-form Ornstein–Uhlenbeck oracle for `dX = A(μ − X) dt + σ dB`.
//!
//! The solution law stays Gaussian with
//! `m(t) = e^{-At} m₀ + (I − e^{-At}) μ` and
//! `Σ(t) = e^{-At} (Σ₀ − Σ∞) e^{-Aᵀt} + Σ∞`, where `Σ∞` solves the Lyapunov
//! equation `A Σ∞ + Σ∞ Aᵀ = σ² I`. For symmetric `A` this is
//! `e^{-At} Σ₀ e^{-At} + σ² (2A)⁻¹ (I − e^{-2At})` and `Σ∞ = (σ²/2) A⁻¹`.

use thiserror::Error;

use crate::model::{ModelError, SdeSystem};
use crate::numerics::{self, Matrix, NumericsError, SymmetricMatrix, Vector};
use crate::wasserstein::{self, GaussianLaw, TransportError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OuError {
    #[error("drift matrix must have positive-definite symmetric part (λ_min(A+Aᵀ) = {0:e})")]
    NotPositiveDefinite(f64),
    #[error("sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("time must be finite and nonnegative, got {0}")]
    InvalidTime(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuSystem {
    a: Matrix,
    mu_target: Vec<f64>,
    sigma: f64,
    stationary_cov: SymmetricMatrix,
}

/// Contraction constants for the OU family in the identity metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuConstants {
    pub alpha: f64,
    pub beta: f64,
    pub c_sigma: f64,
}

impl OuConstants {
    /// Residual level `α^{-1/2} √(C_σ/β)` of the Wasserstein bound.
    pub fn asymptotic_bound(&self) -> f64 {
        (self.c_sigma / self.beta).sqrt() / self.alpha.sqrt()
    }
}

impl OuSystem {
    pub fn new(a: Matrix, mu_target: Vec<f64>, sigma: f64) -> Result<Self, OuError> {
        numerics::check_square(&a)?;
        numerics::check_finite(&a)?;
        if mu_target.len() != a.nrows() {
            return Err(NumericsError::DimensionMismatch { expected: a.nrows(), got: mu_target.len() }.into());
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(OuError::InvalidSigma(sigma));
        }
        let (lmin, _) = numerics::sym_part_extremes(&(&a + a.transpose()))?;
        if lmin <= 0.0 {
            return Err(OuError::NotPositiveDefinite(lmin));
        }
        let stationary_cov = solve_lyapunov(&a, sigma * sigma)?;
        Ok(Self { a, mu_target, sigma, stationary_cov })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn mu_target(&self) -> &[f64] {
        &self.mu_target
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Simulatable SDE for this system.
    pub fn sde(&self) -> Result<SdeSystem, ModelError> {
        SdeSystem::ou(self.a.clone(), self.mu_target.clone(), self.sigma)
    }

    /// Stationary covariance `Σ∞`.
    pub fn stationary_cov(&self) -> &SymmetricMatrix {
        &self.stationary_cov
    }

    pub fn stationary_law(&self) -> GaussianLaw {
        GaussianLaw { mean: self.mu_target.clone(), cov: self.stationary_cov.clone() }
    }

    fn propagator(&self, t: f64) -> Result<Matrix, OuError> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(OuError::InvalidTime(t));
        }
        Ok(numerics::expm(&(&self.a * -t))?)
    }

    pub fn mean(&self, t: f64, mean0: &[f64]) -> Result<Vec<f64>, OuError> {
        let d = self.dim();
        if mean0.len() != d {
            return Err(NumericsError::DimensionMismatch { expected: d, got: mean0.len() }.into());
        }
        let e = self.propagator(t)?;
        let m0 = Vector::from_column_slice(mean0);
        let mu = Vector::from_column_slice(&self.mu_target);
        let out = &e * m0 + (Matrix::identity(d, d) - &e) * mu;
        Ok(out.iter().copied().collect())
    }

    pub fn cov(&self, t: f64, cov0: &SymmetricMatrix) -> Result<SymmetricMatrix, OuError> {
        if cov0.dim() != self.dim() {
            return Err(NumericsError::DimensionMismatch { expected: self.dim(), got: cov0.dim() }.into());
        }
        let e = self.propagator(t)?;
        let gap = cov0.as_matrix() - self.stationary_cov.as_matrix();
        Ok(SymmetricMatrix::new(&e * gap * e.transpose() + self.stationary_cov.as_matrix())?)
    }

    pub fn law(&self, t: f64, law0: &GaussianLaw) -> Result<GaussianLaw, OuError> {
        Ok(GaussianLaw { mean: self.mean(t, &law0.mean)?, cov: self.cov(t, &law0.cov)? })
    }

    /// Exact W2 between the time-`t` laws started from `law0_mu` and `law0_nu`.
    pub fn exact_w2(&self, t: f64, law0_mu: &GaussianLaw, law0_nu: &GaussianLaw) -> Result<f64, OuError> {
        Ok(wasserstein::w2_gaussian(&self.law(t, law0_mu)?, &self.law(t, law0_nu)?)?)
    }

    /// `α = 1`, `β = λ_min(A + Aᵀ)/2`, `C_σ = d σ²`.
    pub fn constants(&self) -> OuConstants {
        let (lmin, _) = numerics::sym_part_extremes(&(&self.a + self.a.transpose())).expect("validated at construction");
        OuConstants { alpha: 1.0, beta: lmin / 2.0, c_sigma: self.dim() as f64 * self.sigma * self.sigma }
    }
}

/// Solve `A X + X Aᵀ = q I` for symmetric `X` via the Kronecker form
/// `(I ⊗ A + A ⊗ I) vec X = q vec I`.
fn solve_lyapunov(a: &Matrix, q: f64) -> Result<SymmetricMatrix, NumericsError> {
    let d = a.nrows();
    let ident = Matrix::identity(d, d);
    let op = ident.kronecker(a) + a.kronecker(&ident);
    let rhs = Matrix::from_fn(d * d, 1, |k, _| if k % (d + 1) == 0 { q } else { 0.0 });
    let x = numerics::solve(&op, &rhs)?;
    SymmetricMatrix::new(Matrix::from_column_slice(d, d, x.as_slice()))
}
