//! Generalized Jacobian `F = (Θ̇ + Θ ∂f/∂x) Θ⁻¹` in a time-varying metric
//! `M(t) = Θ(t)ᵀ Θ(t)`, sampled contraction-rate and metric-floor estimates,
//! and the assembled [`ContractionCertificate`].

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, ModelError, SamplingBox, SdeSystem};
use crate::numerics::{self, Matrix, NumericsError, SymmetricMatrix};

/// Step used for central differences of `Θ(t)` when no derivative is given.
pub const THETA_DOT_STEP: f64 = 1e-6;

/// `|λ_max| ≤ CONTRACTION_TIE` is reported as not contracting.
pub const CONTRACTION_TIE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContractionError {
    #[error("metric factor Θ(t) is singular at t = {t} (condition {condition:e})")]
    SingularTheta { t: f64, condition: f64 },
    #[error("metric not uniformly positive definite: λ_min(M({t})) = {min_eigenvalue:e}")]
    MetricNotPositive { t: f64, min_eigenvalue: f64 },
    #[error("metric factor has shape {rows}x{cols}, expected {expected}x{expected}")]
    MetricShape { rows: usize, cols: usize, expected: usize },
    #[error("invalid time range [{0}, {1}]")]
    InvalidRange(f64, f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type ThetaFn = dyn Fn(f64) -> Matrix + Send + Sync;

/// Contraction metric `M(t) = Θ(t)ᵀ Θ(t)` (state-independent).
#[derive(Clone)]
pub struct MetricField {
    dim: usize,
    theta: Arc<ThetaFn>,
    theta_dot: Option<Arc<ThetaFn>>,
    alpha_floor: Option<f64>,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricField")
            .field("dim", &self.dim)
            .field("analytic_theta_dot", &self.theta_dot.is_some())
            .field("alpha_floor", &self.alpha_floor)
            .finish()
    }
}

impl MetricField {
    pub fn new<T>(dim: usize, theta: T) -> Self
    where
        T: Fn(f64) -> Matrix + Send + Sync + 'static,
    {
        Self { dim, theta: Arc::new(theta), theta_dot: None, alpha_floor: None }
    }

    pub fn identity(dim: usize) -> Self {
        Self::constant(Matrix::identity(dim, dim)).with_alpha_floor(1.0)
    }

    pub fn constant(theta: Matrix) -> Self {
        let dim = theta.nrows();
        let zero = Matrix::zeros(dim, dim);
        Self::new(dim, move |_| theta.clone()).with_theta_dot(move |_| zero.clone())
    }

    pub fn with_theta_dot<T>(mut self, theta_dot: T) -> Self
    where
        T: Fn(f64) -> Matrix + Send + Sync + 'static,
    {
        self.theta_dot = Some(Arc::new(theta_dot));
        self
    }

    /// Declare a metric floor α. It is only used when consistent with the
    /// sampled minimum eigenvalue of `M(t)`.
    pub fn with_alpha_floor(mut self, alpha: f64) -> Self {
        self.alpha_floor = Some(alpha);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha_floor(&self) -> Option<f64> {
        self.alpha_floor
    }

    pub fn theta(&self, t: f64) -> Result<Matrix, ContractionError> {
        let th = (self.theta)(t);
        if th.nrows() != self.dim || th.ncols() != self.dim {
            return Err(ContractionError::MetricShape { rows: th.nrows(), cols: th.ncols(), expected: self.dim });
        }
        numerics::check_finite(&th)?;
        Ok(th)
    }

    /// `Θ̇(t)`: the analytic callback if present, otherwise a central
    /// difference with step [`THETA_DOT_STEP`] (O(h²) truncation error).
    pub fn theta_dot(&self, t: f64) -> Result<Matrix, ContractionError> {
        match &self.theta_dot {
            Some(td) => Ok(td(t)),
            None => {
                let h = THETA_DOT_STEP;
                Ok((self.theta(t + h)? - self.theta(t - h)?) / (2.0 * h))
            }
        }
    }

    /// `M(t) = Θ(t)ᵀ Θ(t)`.
    pub fn metric(&self, t: f64) -> Result<SymmetricMatrix, ContractionError> {
        let th = self.theta(t)?;
        Ok(SymmetricMatrix::new(th.transpose() * th)?)
    }
}

/// `F(x, t) = (Θ̇(t) + Θ(t) ∂f/∂x(x)) Θ(t)⁻¹`.
pub fn generalized_jacobian(
    system: &SdeSystem,
    metric: &MetricField,
    x: &[f64],
    t: f64,
) -> Result<Matrix, ContractionError> {
    let theta = metric.theta(t)?;
    let theta_inv = numerics::inverse(&theta).map_err(|e| match e {
        NumericsError::IllConditioned { condition } => ContractionError::SingularTheta { t, condition },
        other => other.into(),
    })?;
    let jac = system.drift_jacobian(x)?;
    Ok((metric.theta_dot(t)? + &theta * jac) * theta_inv)
}

/// Sample location of the largest symmetric-part eigenvalue of `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstPoint {
    pub x: Vec<f64>,
    pub t: f64,
}

/// Sampled contraction rate: `β̂ = −max λ_max(sym F(x, t))` over the box.
pub fn estimate_contraction_rate(
    system: &SdeSystem,
    metric: &MetricField,
    sbox: &SamplingBox,
) -> Result<(f64, WorstPoint), ContractionError> {
    sbox.check_dim(system.dim())?;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_point = WorstPoint { x: vec![], t: 0.0 };
    for (x, t) in sbox.points() {
        let f = generalized_jacobian(system, metric, &x, t)?;
        let (_, lmax) = numerics::sym_part_extremes(&f)?;
        if lmax > worst {
            worst = lmax;
            worst_point = WorstPoint { x, t };
        }
    }
    Ok((-worst, worst_point))
}

/// Sampled metric floor `min_t λ_min(M(t))` on an even grid of `n_samples`
/// times spanning `[t0, t1]` (endpoints included).
///
/// Returns the declared `alpha_floor` when it does not exceed the sampled
/// minimum (relative slack `1e-8`); otherwise the sampled minimum.
pub fn estimate_metric_floor(metric: &MetricField, t_range: (f64, f64), n_samples: usize) -> Result<f64, ContractionError> {
    let (t0, t1) = t_range;
    if !(t0.is_finite() && t1.is_finite() && t0 <= t1) || n_samples == 0 {
        return Err(ContractionError::InvalidRange(t0, t1));
    }
    let mut min_eig = f64::INFINITY;
    let mut argmin = t0;
    for k in 0..n_samples {
        let t = if n_samples == 1 { t0 } else { t0 + (t1 - t0) * k as f64 / (n_samples - 1) as f64 };
        let lmin = numerics::sym_eig(&metric.metric(t)?)?.min();
        if lmin < min_eig {
            min_eig = lmin;
            argmin = t;
        }
    }
    if min_eig <= 0.0 {
        return Err(ContractionError::MetricNotPositive { t: argmin, min_eigenvalue: min_eig });
    }
    match metric.alpha_floor {
        Some(declared) if declared > 0.0 && declared <= min_eig + 1e-8 * min_eig.abs() => Ok(declared),
        _ => Ok(min_eig),
    }
}

/// Assembled contraction/regularity constants with their sampling provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate {
    pub beta: f64,
    pub alpha: f64,
    pub c_sigma: f64,
    pub c_ellip: f64,
    pub k1: f64,
    pub k2: f64,
    pub contracting: bool,
    /// `None` for analytically derived certificates.
    #[serde(rename = "box")]
    pub sampling_box: Option<SamplingBox>,
    pub worst_point: Option<WorstPoint>,
}

impl ContractionCertificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

/// Whether a sampled rate counts as contracting.
pub fn is_contracting(beta_hat: f64) -> bool {
    beta_hat > CONTRACTION_TIE
}

/// Sample all constants over `sbox`.
pub fn certify(
    system: &SdeSystem,
    metric: &MetricField,
    sbox: &SamplingBox,
) -> Result<ContractionCertificate, ContractionError> {
    if metric.dim() != system.dim() {
        return Err(NumericsError::DimensionMismatch { expected: system.dim(), got: metric.dim() }.into());
    }
    let (beta, worst) = estimate_contraction_rate(system, metric, sbox)?;
    let alpha = estimate_metric_floor(metric, (0.0, sbox.t_max), sbox.n_samples.max(2))?;
    let reg = model::estimate_regularity(system, metric, sbox)?;
    Ok(ContractionCertificate {
        beta,
        alpha,
        c_sigma: reg.c_sigma_hat,
        c_ellip: reg.c_hat,
        k1: reg.k1_hat,
        k2: reg.k2_hat,
        contracting: is_contracting(beta),
        sampling_box: Some(sbox.clone()),
        worst_point: Some(worst),
    })
}
