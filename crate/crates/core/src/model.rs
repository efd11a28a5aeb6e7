//! Itô SDE representation `dX = f(X) dt + σ(X, t) dB` and sampled estimates of
//! the regularity constants (noise trace bound, ellipticity, growth and
//! Lipschitz constants).
//!
//! All estimates are maxima/minima over points drawn from a [`SamplingBox`].
//! They are lower bounds on the true suprema (resp. upper bounds on infima)
//! and only describe the sampled region.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contraction::MetricField;
use crate::numerics::{self, Matrix, NumericsError, SymmetricMatrix};

/// In-place drift evaluation `out = f(x)`.
pub type DriftFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
/// In-place diffusion evaluation `out = σ(x, t)` (d×d).
pub type DiffusionFn = dyn Fn(&[f64], f64, &mut Matrix) + Send + Sync;
/// In-place drift Jacobian evaluation `out = ∂f/∂x`.
pub type JacobianFn = dyn Fn(&[f64], &mut Matrix) + Send + Sync;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{what} returned shape {rows}x{cols}, expected {expected}x{expected}")]
    Shape { what: &'static str, rows: usize, cols: usize, expected: usize },
    #[error("{what} returned non-finite values at x = {x:?}, t = {t}")]
    NonFinite { what: &'static str, x: Vec<f64>, t: f64 },
    #[error("invalid sampling box: {0}")]
    InvalidBox(String),
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// An autonomous-drift Itô SDE on ℝ^d with square diffusion matrix.
#[derive(Clone)]
pub struct SdeSystem {
    dim: usize,
    drift: Arc<DriftFn>,
    diffusion: Arc<DiffusionFn>,
    jacobian: Option<Arc<JacobianFn>>,
    label: String,
}

impl fmt::Debug for SdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeSystem")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl SdeSystem {
    pub fn new<F, G>(dim: usize, drift: F, diffusion: G) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        G: Fn(&[f64], f64, &mut Matrix) + Send + Sync + 'static,
    {
        assert!(dim > 0, "dimension must be positive");
        Self {
            dim,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            jacobian: None,
            label: "custom".into(),
        }
    }

    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&[f64], &mut Matrix) + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// `f(x) = A(μ − x)`, `σ = s·I`.
    pub fn ou(a: Matrix, mu: Vec<f64>, sigma: f64) -> Result<Self, ModelError> {
        let d = a.nrows();
        numerics::check_square(&a)?;
        numerics::check_finite(&a)?;
        if mu.len() != d {
            return Err(NumericsError::DimensionMismatch { expected: d, got: mu.len() }.into());
        }
        let a_drift = a.clone();
        let a_jac = a;
        Ok(Self::new(
            d,
            move |x, out| {
                for i in 0..d {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += a_drift[(i, j)] * (mu[j] - x[j]);
                    }
                    out[i] = acc;
                }
            },
            constant_isotropic(sigma),
        )
        .with_jacobian(move |_, out| out.copy_from(&(-&a_jac)))
        .with_label("ou"))
    }

    /// Scalar `f(x) = −a·x`, `σ` constant.
    pub fn scalar_linear(a: f64, sigma: f64) -> Self {
        Self::new(1, move |x, out| out[0] = -a * x[0], constant_isotropic(sigma))
            .with_jacobian(move |_, out| out[(0, 0)] = -a)
            .with_label("scalar_linear")
    }

    /// Componentwise `f(x)_i = −x_i − x_i³`, `σ = s·I`.
    pub fn gradient_quartic(dim: usize, sigma: f64) -> Self {
        Self::new(
            dim,
            |x, out| {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = -v - v * v * v;
                }
            },
            constant_isotropic(sigma),
        )
        .with_jacobian(|x, out| {
            out.fill(0.0);
            for (i, &v) in x.iter().enumerate() {
                out[(i, i)] = -1.0 - 3.0 * v * v;
            }
        })
        .with_label("gradient_quartic")
    }

    /// Linear drift `f(x) = A·x` with constant diffusion `sigma`.
    pub fn linear(a: Matrix, sigma: Matrix) -> Self {
        let d = a.nrows();
        let a_drift = a.clone();
        Self::new(
            d,
            move |x, out| {
                for i in 0..d {
                    out[i] = (0..d).map(|j| a_drift[(i, j)] * x[j]).sum();
                }
            },
            move |_, _, out| out.copy_from(&sigma),
        )
        .with_jacobian(move |_, out| out.copy_from(&a))
        .with_label("linear")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// `f(x)` into `out` (no shape checks; hot path).
    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    /// `σ(x, t)` into `out` (no shape checks; hot path).
    #[inline]
    pub fn diffusion_into(&self, x: &[f64], t: f64, out: &mut Matrix) {
        (self.diffusion)(x, t, out)
    }

    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut out = vec![0.0; self.dim];
        (self.drift)(x, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { what: "drift", x: x.to_vec(), t: f64::NAN });
        }
        Ok(out)
    }

    pub fn diffusion(&self, x: &[f64], t: f64) -> Result<Matrix, ModelError> {
        let mut out = Matrix::zeros(self.dim, self.dim);
        (self.diffusion)(x, t, &mut out);
        self.check_square_output("diffusion", &out)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { what: "diffusion", x: x.to_vec(), t });
        }
        Ok(out)
    }

    /// Drift Jacobian: the analytic callback when present, else central
    /// differences with step `max(1e-6, 1e-7·‖x‖)`.
    pub fn drift_jacobian(&self, x: &[f64]) -> Result<Matrix, ModelError> {
        let d = self.dim;
        let mut jac = Matrix::zeros(d, d);
        if let Some(j) = &self.jacobian {
            j(x, &mut jac);
            self.check_square_output("jacobian", &jac)?;
        } else {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let h = (1e-7 * norm).max(1e-6);
            let mut xp = x.to_vec();
            let mut fp = vec![0.0; d];
            let mut fm = vec![0.0; d];
            for k in 0..d {
                xp[k] = x[k] + h;
                (self.drift)(&xp, &mut fp);
                xp[k] = x[k] - h;
                (self.drift)(&xp, &mut fm);
                xp[k] = x[k];
                for i in 0..d {
                    jac[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
                }
            }
        }
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { what: "jacobian", x: x.to_vec(), t: f64::NAN });
        }
        Ok(jac)
    }

    fn check_square_output(&self, what: &'static str, m: &Matrix) -> Result<(), ModelError> {
        if m.nrows() != self.dim || m.ncols() != self.dim {
            return Err(ModelError::Shape { what, rows: m.nrows(), cols: m.ncols(), expected: self.dim });
        }
        Ok(())
    }
}

fn constant_isotropic(sigma: f64) -> impl Fn(&[f64], f64, &mut Matrix) + Send + Sync + 'static {
    move |_, _, out: &mut Matrix| {
        out.fill(0.0);
        out.fill_diagonal(sigma);
    }
}

/// Axis-aligned region `[lower, upper] × [0, t_max]` over which suprema and
/// infima are sample-estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub t_max: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl SamplingBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, t_max: f64, n_samples: usize, seed: u64) -> Result<Self, ModelError> {
        let b = Self { lower, upper, t_max, n_samples, seed };
        b.validate()?;
        Ok(b)
    }

    /// The cube `[-half_width, half_width]^dim`.
    pub fn cube(dim: usize, half_width: f64, t_max: f64, n_samples: usize, seed: u64) -> Result<Self, ModelError> {
        Self::new(vec![-half_width; dim], vec![half_width; dim], t_max, n_samples, seed)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(ModelError::InvalidBox(format!(
                "corner dimensions {} and {} must agree and be positive",
                self.lower.len(),
                self.upper.len()
            )));
        }
        if !self.lower.iter().zip(&self.upper).all(|(l, u)| l.is_finite() && u.is_finite() && l < u) {
            return Err(ModelError::InvalidBox("lower < upper must hold componentwise".into()));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(ModelError::InvalidBox(format!("t_max must be positive, got {}", self.t_max)));
        }
        if self.n_samples == 0 {
            return Err(ModelError::InvalidBox("n_samples must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<(), ModelError> {
        self.validate()?;
        if self.dim() != dim {
            return Err(ModelError::InvalidBox(format!("box has dimension {}, system has {}", self.dim(), dim)));
        }
        Ok(())
    }

    /// The `n_samples` points `(x, t)` drawn uniformly from the box. A larger
    /// `n_samples` with the same seed extends the same sequence.
    pub fn points(&self) -> Vec<(Vec<f64>, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.n_samples).map(|_| self.draw(&mut rng)).collect()
    }

    /// `n_samples` independent pairs `(x, y, t)` for Lipschitz estimation.
    pub fn pairs(&self) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        (0..self.n_samples)
            .map(|_| {
                let (x, t) = self.draw(&mut rng);
                let (y, _) = self.draw(&mut rng);
                (x, y, t)
            })
            .collect()
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
        let x = self.lower.iter().zip(&self.upper).map(|(&l, &u)| rng.gen_range(l..u)).collect();
        let t = rng.gen_range(0.0..=self.t_max);
        (x, t)
    }
}

/// Sampled estimates of the diffusion and regularity constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub c_sigma_hat: f64,
    /// May be non-positive, which flags a failure of sampled ellipticity.
    pub c_hat: f64,
    pub k1_hat: f64,
    pub k2_hat: f64,
    pub n_samples: usize,
    pub sampling_box: SamplingBox,
}

/// `max trace(σᵀ M(t) σ)` over sampled `(x, t)`.
pub fn estimate_noise_trace_bound(
    system: &SdeSystem,
    metric: &MetricField,
    sbox: &SamplingBox,
) -> Result<f64, ModelError> {
    sbox.check_dim(system.dim())?;
    let mut best: f64 = 0.0;
    for (x, t) in sbox.points() {
        let s = system.diffusion(&x, t)?;
        let m = metric.metric(t).map_err(|e| ModelError::InvalidSystem(e.to_string()))?;
        let tr = (s.transpose() * m.as_matrix() * &s).trace();
        best = best.max(tr);
    }
    Ok(best)
}

/// `min λ_min(σσᵀ)` over sampled `(x, t)`.
pub fn estimate_ellipticity(system: &SdeSystem, sbox: &SamplingBox) -> Result<f64, ModelError> {
    sbox.check_dim(system.dim())?;
    let mut best = f64::INFINITY;
    for (x, t) in sbox.points() {
        let s = system.diffusion(&x, t)?;
        let diffusion_matrix = SymmetricMatrix::new(&s * s.transpose())?;
        best = best.min(numerics::sym_eig(&diffusion_matrix)?.min());
    }
    Ok(best)
}

/// `(K1_hat, K2_hat)`: maximum growth ratio `(‖f(x)‖ + ‖σ‖_F)/(1 + ‖x‖)` over
/// sampled points and maximum difference quotient over sampled pairs. Pairs
/// closer than `1e-9` are skipped.
pub fn estimate_growth_lipschitz(system: &SdeSystem, sbox: &SamplingBox) -> Result<(f64, f64), ModelError> {
    sbox.check_dim(system.dim())?;
    let mut k1: f64 = 0.0;
    for (x, t) in sbox.points() {
        let f = system.drift(&x)?;
        let s = system.diffusion(&x, t)?;
        k1 = k1.max((norm(&f) + s.norm()) / (1.0 + norm(&x)));
    }
    let mut k2: f64 = 0.0;
    for (x, y, t) in sbox.pairs() {
        let gap: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let dist = norm(&gap);
        if dist < 1e-9 {
            continue;
        }
        let fx = system.drift(&x)?;
        let fy = system.drift(&y)?;
        let df: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a - b).collect();
        let ds: DMatrix<f64> = system.diffusion(&x, t)? - system.diffusion(&y, t)?;
        k2 = k2.max((norm(&df) + ds.norm()) / dist);
    }
    Ok((k1, k2))
}

/// Run all three estimators over one box.
pub fn estimate_regularity(
    system: &SdeSystem,
    metric: &MetricField,
    sbox: &SamplingBox,
) -> Result<RegularityReport, ModelError> {
    let c_sigma_hat = estimate_noise_trace_bound(system, metric, sbox)?;
    let c_hat = estimate_ellipticity(system, sbox)?;
    let (k1_hat, k2_hat) = estimate_growth_lipschitz(system, sbox)?;
    Ok(RegularityReport { c_sigma_hat, c_hat, k1_hat, k2_hat, n_samples: sbox.n_samples, sampling_box: sbox.clone() })
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
