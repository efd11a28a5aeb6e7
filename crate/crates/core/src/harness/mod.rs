//! End-to-end experiments: simulate two ensembles of one system, compare their
//! empirical Wasserstein and mean-square gaps against the contraction bounds,
//! and write the comparison as CSV or JSON.

mod config;
mod report;
mod run;

pub use config::{
    analytic_certificate, CertificateSpec, ExperimentConfig, GridSpec, InitCoupling, MetricSpec, SystemSpec,
    W2Method, DEFAULT_DT, DEFAULT_GEOMETRIC_SNAPSHOTS, DEFAULT_HORIZON_RATES, MIN_TRAJECTORIES,
};
pub use report::{emit_report, write_report, BoundReport, BoundRow, CertificateSource, ReportFormat, CSV_HEADER};
pub use run::{run_experiment, run_experiment_with_threads, MARGIN_SDS, SUB_ENSEMBLES};

use thiserror::Error;

use crate::contraction::ContractionError;
use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::ou::OuError;
use crate::simulate::SimulationError;
use crate::wasserstein::TransportError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bound parameters out of range: {0}")]
    InvalidBound(String),
    #[error("certificate is not contracting (beta = {beta:e}); the bound does not apply")]
    NotContracting { beta: f64 },
    #[error("decay fit needs at least 3 points above the floor, got {usable}")]
    TooFewPoints { usable: usize },
    #[error("could not build thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Contraction(#[from] ContractionError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Ou(#[from] OuError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn check_bound_args(t: f64, alpha: f64, beta: f64, c_sigma: f64) -> Result<(), HarnessError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(HarnessError::InvalidBound(format!("alpha must be positive, got {alpha}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(HarnessError::InvalidBound(format!("beta must be positive, got {beta}")));
    }
    if !(c_sigma >= 0.0 && c_sigma.is_finite()) {
        return Err(HarnessError::InvalidBound(format!("c_sigma must be nonnegative, got {c_sigma}")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(HarnessError::InvalidBound(format!("t must be nonnegative, got {t}")));
    }
    Ok(())
}

/// `α^{-1/2} (e^{-βt} w2_0 + √(C_σ/β))`.
pub fn theoretical_bound_w2(t: f64, w2_0: f64, alpha: f64, beta: f64, c_sigma: f64) -> Result<f64, HarnessError> {
    check_bound_args(t, alpha, beta, c_sigma)?;
    Ok(((-beta * t).exp() * w2_0 + (c_sigma / beta).sqrt()) / alpha.sqrt())
}

/// `(1/α) (e^{-2βt} ms_0 + C_σ/β)`.
pub fn theoretical_bound_ms(t: f64, ms_0: f64, alpha: f64, beta: f64, c_sigma: f64) -> Result<f64, HarnessError> {
    check_bound_args(t, alpha, beta, c_sigma)?;
    Ok(((-2.0 * beta * t).exp() * ms_0 + c_sigma / beta) / alpha)
}

/// Least-squares line through `(t, ln(v − floor))` over the points with
/// `v > floor`. Returns `(rate, intercept, r²)` where `rate = −slope`, so a
/// decaying series has a positive rate. A perfectly flat series has `r² = 1`.
pub fn fit_decay_rate(times: &[f64], values: &[f64], floor: f64) -> Result<(f64, f64, f64), HarnessError> {
    if times.len() != values.len() {
        return Err(HarnessError::InvalidBound(format!(
            "{} times but {} values",
            times.len(),
            values.len()
        )));
    }
    if !(floor >= 0.0 && floor.is_finite()) {
        return Err(HarnessError::InvalidBound(format!("floor must be nonnegative, got {floor}")));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, v)| t.is_finite() && v.is_finite() && **v > floor)
        .map(|(&t, &v)| (t, (v - floor).ln()))
        .collect();
    let n = pts.len();
    if n < 3 {
        return Err(HarnessError::TooFewPoints { usable: n });
    }
    let nf = n as f64;
    let t_mean = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let y_mean = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let stt: f64 = pts.iter().map(|p| (p.0 - t_mean).powi(2)).sum();
    if stt == 0.0 {
        return Err(HarnessError::InvalidBound("all usable times coincide".into()));
    }
    let sty: f64 = pts.iter().map(|p| (p.0 - t_mean) * (p.1 - y_mean)).sum();
    let slope = sty / stt;
    let intercept = y_mean - slope * t_mean;
    let syy: f64 = pts.iter().map(|p| (p.1 - y_mean).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok((-slope, intercept, r2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_examples() {
        let b = theoretical_bound_w2(1.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        assert!((b - ((-1.0f64).exp() + 0.5f64.sqrt())).abs() < 1e-15);
        assert!((b - 1.0750).abs() < 1e-4);
        let m = theoretical_bound_ms(1.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        assert!((m - ((-2.0f64).exp() + 0.5)).abs() < 1e-15);
        assert!((m - 0.6353).abs() < 1e-4);

        assert_eq!(theoretical_bound_w2(0.0, 2.0, 4.0, 1.0, 1.0).unwrap(), 0.5 * 3.0);
        assert_eq!(theoretical_bound_ms(0.0, 2.0, 4.0, 1.0, 1.0).unwrap(), 0.75);
        let pure = theoretical_bound_w2(2.0, 3.0, 1.0, 0.5, 0.0).unwrap();
        assert!((pure - 3.0 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn bound_argument_errors() {
        assert!(theoretical_bound_w2(1.0, 1.0, 0.0, 1.0, 0.5).is_err());
        assert!(theoretical_bound_w2(1.0, 1.0, 1.0, -1.0, 0.5).is_err());
        assert!(theoretical_bound_ms(1.0, 1.0, 1.0, 0.0, 0.5).is_err());
        assert!(theoretical_bound_ms(1.0, 1.0, -1.0, 1.0, 0.5).is_err());
        assert!(theoretical_bound_ms(1.0, 1.0, 1.0, 1.0, -0.5).is_err());
    }

    #[test]
    fn squared_w2_bound_dominates_ms_bound() {
        // (a + b)² ≥ a² + b² for a, b ≥ 0, with ms_0 = w2_0².
        for &(t, w0, alpha, beta, cs) in
            &[(0.0, 1.0, 1.0, 1.0, 0.5), (0.3, 2.0, 0.5, 0.7, 1.3), (5.0, 0.1, 2.0, 3.0, 0.0), (1.0, 0.0, 1.0, 1.0, 2.0)]
        {
            let w = theoretical_bound_w2(t, w0, alpha, beta, cs).unwrap();
            let m = theoretical_bound_ms(t, w0 * w0, alpha, beta, cs).unwrap();
            assert!(w * w >= m - 1e-15 * m, "{w} {m}");
        }
    }

    #[test]
    fn bound_decreases_to_noise_floor() {
        let (alpha, beta, cs) = (0.8, 1.5, 0.7);
        let ts: Vec<f64> = (0..=200).map(|k| k as f64 * 0.25).collect();
        let bs: Vec<f64> = ts.iter().map(|&t| theoretical_bound_w2(t, 1.0, alpha, beta, cs).unwrap()).collect();
        assert!(bs.windows(2).all(|w| w[1] <= w[0]));
        assert!(bs[..=80].windows(2).all(|w| w[1] < w[0]));
        let limit = (cs / beta).sqrt() / alpha.sqrt();
        let at = theoretical_bound_w2(50.0 / beta, 1.0, alpha, beta, cs).unwrap();
        assert!((at - limit).abs() < 1e-10);
        // σ ×2 ⇒ C_σ ×4 ⇒ residual ×2.
        let doubled = theoretical_bound_w2(50.0 / beta, 1.0, alpha, beta, 4.0 * cs).unwrap();
        assert!((doubled - 2.0 * limit).abs() < 1e-10);
    }

    #[test]
    fn fit_examples() {
        let ts: Vec<f64> = (0..20).map(|k| k as f64 * 0.3).collect();
        let vs: Vec<f64> = ts.iter().map(|t| (-2.0 * t).exp()).collect();
        let (rate, intercept, r2) = fit_decay_rate(&ts, &vs, 0.0).unwrap();
        assert!((rate - 2.0).abs() < 1e-12);
        assert!(intercept.abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-9);

        let flat = vec![3.0; ts.len()];
        let (rate, _, r2) = fit_decay_rate(&ts, &flat, 0.0).unwrap();
        assert_eq!(rate, 0.0);
        assert_eq!(r2, 1.0);

        let shifted: Vec<f64> = vs.iter().map(|v| v + 0.25).collect();
        let (rate, _, _) = fit_decay_rate(&ts, &shifted, 0.25).unwrap();
        assert!((rate - 2.0).abs() < 1e-9);
    }

    #[test]
    fn fit_needs_three_points() {
        assert!(matches!(
            fit_decay_rate(&[0.0, 1.0, 2.0], &[1.0, 0.5, 0.0], 0.0),
            Err(HarnessError::TooFewPoints { usable: 2 })
        ));
        assert!(matches!(fit_decay_rate(&[0.0, 1.0], &[1.0, 0.5], 0.0), Err(HarnessError::TooFewPoints { .. })));
    }
}
