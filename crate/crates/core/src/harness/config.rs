use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::contraction::{ContractionCertificate, MetricField};
use crate::model::{SamplingBox, SdeSystem};
use crate::numerics::{self, Matrix, SymmetricMatrix};
use crate::ou::OuSystem;
use crate::simulate::{geometric_times, InitialSampler, TimeGrid};
use crate::wasserstein::{GaussianLaw, SinkhornOptions};

/// Smallest ensemble accepted for statistical outputs.
pub const MIN_TRAJECTORIES: usize = 50;

/// Default Euler step.
pub const DEFAULT_DT: f64 = 1e-3;

/// Default horizon in units of `1/β`.
pub const DEFAULT_HORIZON_RATES: f64 = 6.0;

/// Default number of geometrically spaced snapshots (plus `t = 0`).
pub const DEFAULT_GEOMETRIC_SNAPSHOTS: usize = 25;

/// Built-in system families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SystemSpec {
    /// `dX = A(μ − X) dt + σ dB`, `a` given as rows.
    Ou { a: Vec<Vec<f64>>, mu: Vec<f64>, sigma: f64 },
    /// `dX = −a X dt + σ dB` in one dimension.
    ScalarLinear { a: f64, sigma: f64 },
    /// `dX_i = (−X_i − X_i³) dt + σ dB_i`.
    GradientQuartic { dim: usize, sigma: f64 },
}

impl SystemSpec {
    pub fn dim(&self) -> usize {
        match self {
            Self::Ou { mu, .. } => mu.len(),
            Self::ScalarLinear { .. } => 1,
            Self::GradientQuartic { dim, .. } => *dim,
        }
    }

    pub fn build(&self) -> Result<SdeSystem, HarnessError> {
        self.check_sigma()?;
        match self {
            Self::Ou { a, mu, sigma } => Ok(SdeSystem::ou(rows_to_matrix(a)?, mu.clone(), *sigma)?),
            Self::ScalarLinear { a, sigma } => {
                finite(*a, "a")?;
                Ok(SdeSystem::scalar_linear(*a, *sigma))
            }
            Self::GradientQuartic { dim, sigma } => {
                if *dim == 0 {
                    return Err(HarnessError::InvalidConfig("gradient_quartic needs dim ≥ 1".into()));
                }
                Ok(SdeSystem::gradient_quartic(*dim, *sigma))
            }
        }
    }

    /// The closed-form oracle when the family is an OU process
    /// (`scalar_linear` is OU with `A = a`, `μ = 0`).
    pub fn ou(&self) -> Result<Option<OuSystem>, HarnessError> {
        match self {
            Self::Ou { a, mu, sigma } => Ok(Some(OuSystem::new(rows_to_matrix(a)?, mu.clone(), *sigma)?)),
            Self::ScalarLinear { a, sigma } => {
                Ok(Some(OuSystem::new(Matrix::from_element(1, 1, *a), vec![0.0], *sigma)?))
            }
            Self::GradientQuartic { .. } => Ok(None),
        }
    }

    fn check_sigma(&self) -> Result<(), HarnessError> {
        let sigma = match self {
            Self::Ou { sigma, .. } | Self::ScalarLinear { sigma, .. } | Self::GradientQuartic { sigma, .. } => *sigma,
        };
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(HarnessError::InvalidConfig(format!("sigma must be finite and nonnegative, got {sigma}")));
        }
        Ok(())
    }
}

/// Contraction metric choice (state- and time-independent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpec {
    Identity,
    /// `M = Θᵀ Θ` with `theta` given as rows.
    Constant { theta: Vec<Vec<f64>> },
}

impl MetricSpec {
    fn theta(&self, dim: usize) -> Result<Matrix, HarnessError> {
        let theta = match self {
            Self::Identity => Matrix::identity(dim, dim),
            Self::Constant { theta } => rows_to_matrix(theta)?,
        };
        if theta.nrows() != dim {
            return Err(HarnessError::InvalidConfig(format!(
                "metric is {}x{} but the system has dimension {dim}",
                theta.nrows(),
                theta.ncols()
            )));
        }
        Ok(theta)
    }

    pub fn build(&self, dim: usize) -> Result<MetricField, HarnessError> {
        Ok(match self {
            Self::Identity => MetricField::identity(dim),
            Self::Constant { .. } => MetricField::constant(self.theta(dim)?),
        })
    }
}

/// How the two ensembles' initial states are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitCoupling {
    /// Separate init streams per law.
    #[default]
    Independent,
    /// One shared init stream, so equal samplers give identical initial states.
    Common,
}

/// Time discretization. Missing fields take the documented defaults once the
/// contraction rate is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Explicit snapshot times; `t = 0` is always added.
    #[serde(default)]
    pub snapshot_times: Option<Vec<f64>>,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { t_max: None, dt: DEFAULT_DT, snapshot_times: None }
    }
}

impl GridSpec {
    pub fn resolve(&self, beta: f64) -> Result<TimeGrid, HarnessError> {
        let t_max = match self.t_max {
            Some(t) => t,
            None if beta > 0.0 => DEFAULT_HORIZON_RATES / beta,
            None => return Err(HarnessError::InvalidConfig("t_max needs a positive contraction rate".into())),
        };
        let mut times = match &self.snapshot_times {
            Some(ts) => ts.clone(),
            None => geometric_times(t_max, DEFAULT_GEOMETRIC_SNAPSHOTS),
        };
        if !times.contains(&0.0) {
            times.insert(0, 0.0);
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        Ok(TimeGrid::new(t_max, self.dt, &times)?)
    }
}

/// Empirical W2 estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum W2Method {
    Assignment,
    Sinkhorn {
        epsilon: f64,
        #[serde(default)]
        tol: Option<f64>,
        #[serde(default)]
        max_iter: Option<usize>,
    },
}

impl W2Method {
    pub fn sinkhorn_options(&self) -> Option<SinkhornOptions> {
        match self {
            Self::Assignment => None,
            Self::Sinkhorn { epsilon, tol, max_iter } => {
                let mut opts = SinkhornOptions::new(*epsilon);
                if let Some(tol) = tol {
                    opts.tol = *tol;
                }
                if let Some(max_iter) = max_iter {
                    opts.max_iter = *max_iter;
                }
                Some(opts)
            }
        }
    }
}

/// Where the contraction constants come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CertificateSpec {
    /// Closed-form constants for the linear (OU) families.
    Analytic,
    /// Sampled over a box.
    Sampled {
        #[serde(rename = "box")]
        sampling_box: SamplingBox,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    #[serde(default = "default_metric")]
    pub metric: MetricSpec,
    pub mu0: InitialSampler,
    pub nu0: InitialSampler,
    #[serde(default)]
    pub init_coupling: InitCoupling,
    #[serde(default)]
    pub grid: GridSpec,
    pub n_traj: usize,
    pub master_seed: u64,
    #[serde(default = "default_method")]
    pub w2_method: W2Method,
    pub certificate: CertificateSpec,
}

fn default_metric() -> MetricSpec {
    MetricSpec::Identity
}

fn default_method() -> W2Method {
    W2Method::Assignment
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Structural checks that need no simulation.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let d = self.system.dim();
        self.system.build()?;
        self.metric.theta(d)?;
        for (name, s) in [("mu0", &self.mu0), ("nu0", &self.nu0)] {
            if s.dim() != d {
                return Err(HarnessError::InvalidConfig(format!(
                    "{name} has dimension {} but the system has dimension {d}",
                    s.dim()
                )));
            }
        }
        if self.n_traj < MIN_TRAJECTORIES {
            return Err(HarnessError::InvalidConfig(format!(
                "n_traj must be at least {MIN_TRAJECTORIES}, got {}",
                self.n_traj
            )));
        }
        if let Some(opts) = self.w2_method.sinkhorn_options() {
            if !(opts.epsilon > 0.0 && opts.epsilon.is_finite()) {
                return Err(HarnessError::InvalidConfig(format!("sinkhorn epsilon must be positive, got {}", opts.epsilon)));
            }
        }
        match &self.certificate {
            CertificateSpec::Analytic if self.system.ou()?.is_none() => Err(HarnessError::InvalidConfig(
                "analytic certificates are only available for the ou and scalar_linear families".into(),
            )),
            CertificateSpec::Sampled { sampling_box } if sampling_box.dim() != d => {
                Err(HarnessError::InvalidConfig(format!(
                    "sampling box has dimension {} but the system has dimension {d}",
                    sampling_box.dim()
                )))
            }
            _ => Ok(()),
        }
    }

    /// Initial laws as Gaussians when both samplers are Gaussian or point masses.
    pub fn gaussian_initial_laws(&self) -> Result<Option<(GaussianLaw, GaussianLaw)>, HarnessError> {
        let (Some((m0, c0)), Some((m1, c1))) = (self.mu0.gaussian_moments(), self.nu0.gaussian_moments()) else {
            return Ok(None);
        };
        Ok(Some((GaussianLaw::new(m0, c0)?, GaussianLaw::new(m1, c1)?)))
    }
}

/// Closed-form certificate for `f(x) = A(μ − x)`, `σ = s·I` under a constant
/// metric `M = ΘᵀΘ`: `β = −λ_max(sym(−Θ A Θ⁻¹))`, `α = λ_min(M)`,
/// `C_σ = s² tr M`, `c = s²`, `K2 = ‖A‖₂`, `K1 = max(‖Aμ‖ + s√d, ‖A‖₂)`.
pub fn analytic_certificate(ou: &OuSystem, theta: &Matrix) -> Result<ContractionCertificate, HarnessError> {
    let d = ou.dim();
    let a = ou.a();
    let jac = -(theta * a) * numerics::inverse(theta)?;
    let (_, lmax) = numerics::sym_part_extremes(&jac)?;
    let metric = SymmetricMatrix::new(theta.transpose() * theta)?;
    let alpha = numerics::sym_eig(&metric)?.min();
    let s2 = ou.sigma() * ou.sigma();
    let a_norm = numerics::spectral_norm(a);
    let a_mu = a * numerics::Vector::from_column_slice(ou.mu_target());
    let beta = -lmax;
    Ok(ContractionCertificate {
        beta,
        alpha,
        c_sigma: s2 * metric.trace(),
        c_ellip: s2,
        k1: (a_mu.norm() + ou.sigma() * (d as f64).sqrt()).max(a_norm),
        k2: a_norm,
        contracting: crate::contraction::is_contracting(beta),
        sampling_box: None,
        worst_point: None,
    })
}

impl ExperimentConfig {
    /// Certificate named by the config.
    pub fn certificate(&self) -> Result<ContractionCertificate, HarnessError> {
        let d = self.system.dim();
        match &self.certificate {
            CertificateSpec::Analytic => {
                let ou = self.system.ou()?.ok_or_else(|| {
                    HarnessError::InvalidConfig("analytic certificate requested for a non-linear family".into())
                })?;
                analytic_certificate(&ou, &self.metric.theta(d)?)
            }
            CertificateSpec::Sampled { sampling_box } => {
                let system = self.system.build()?;
                let metric = self.metric.build(d)?;
                Ok(crate::contraction::certify(&system, &metric, sampling_box)?)
            }
        }
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Matrix, HarnessError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(HarnessError::InvalidConfig("matrices must be square and non-empty".into()));
    }
    let m = Matrix::from_fn(n, n, |i, j| rows[i][j]);
    numerics::check_finite(&m)?;
    Ok(m)
}

fn finite(v: f64, name: &str) -> Result<(), HarnessError> {
    if !v.is_finite() {
        return Err(HarnessError::InvalidConfig(format!("{name} must be finite")));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    pub(crate) fn ou_config() -> ExperimentConfig {
        ExperimentConfig {
            system: SystemSpec::Ou { a: vec![vec![1.0, 0.0], vec![0.0, 2.0]], mu: vec![0.0, 0.0], sigma: 0.5 },
            metric: MetricSpec::Identity,
            mu0: InitialSampler::Gaussian { mean: vec![1.0, 0.0], cov: vec![vec![0.1, 0.0], vec![0.0, 0.1]] },
            nu0: InitialSampler::Gaussian { mean: vec![0.0, 0.0], cov: vec![vec![0.1, 0.0], vec![0.0, 0.1]] },
            init_coupling: InitCoupling::Independent,
            grid: GridSpec::default(),
            n_traj: 100,
            master_seed: 1,
            w2_method: W2Method::Assignment,
            certificate: CertificateSpec::Analytic,
        }
    }
}
