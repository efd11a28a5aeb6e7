use rayon::prelude::*;

use super::config::{CertificateSpec, ExperimentConfig, InitCoupling, W2Method};
use super::report::{BoundReport, BoundRow, CertificateSource};
use super::{theoretical_bound_ms, theoretical_bound_w2, HarnessError};
use crate::simulate::{self, Ensemble};
use crate::wasserstein::{self, PointCloud};

/// Number of contiguous sub-ensembles used for the statistical margin.
pub const SUB_ENSEMBLES: usize = 10;

/// Margin width in sub-ensemble standard deviations.
pub const MARGIN_SDS: f64 = 4.0;

const LAW_MU: &str = "mu";
const LAW_NU: &str = "nu";
const INIT_COMMON: &str = "init";

/// Run `cfg` on the global rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<BoundReport, HarnessError> {
    cfg.validate()?;
    let certificate = cfg.certificate()?;
    if !certificate.contracting {
        return Err(HarnessError::NotContracting { beta: certificate.beta });
    }
    let grid = cfg.grid.resolve(certificate.beta)?;
    let system = cfg.system.build()?;

    let (init_mu, init_nu) = match cfg.init_coupling {
        InitCoupling::Independent => (LAW_MU, LAW_NU),
        InitCoupling::Common => (INIT_COMMON, INIT_COMMON),
    };
    let x = simulate::simulate_ensemble_with_init(&system, &cfg.mu0, cfg.n_traj, &grid, cfg.master_seed, LAW_MU, init_mu)?;
    let y = simulate::simulate_ensemble_with_init(&system, &cfg.nu0, cfg.n_traj, &grid, cfg.master_seed, LAW_NU, init_nu)?;

    let ms = simulate::mean_square_gap(&x, &y)?;
    let snapshot_stats: Vec<SnapshotStats> = (0..x.snapshots.len())
        .into_par_iter()
        .map(|s| snapshot_stats(&x, &y, s, &cfg.w2_method))
        .collect::<Result<_, _>>()?;

    let gaussian = cfg.gaussian_initial_laws()?;
    let w2_0 = match &gaussian {
        Some((m0, n0)) => wasserstein::w2_gaussian(m0, n0)?,
        None => snapshot_stats[0].w2,
    };
    let ms_0 = ms[0];
    let oracle = match (&gaussian, cfg.system.ou()?) {
        (Some(laws), Some(ou)) => Some((laws, ou)),
        _ => None,
    };

    let (alpha, beta, c_sigma) = (certificate.alpha, certificate.beta, certificate.c_sigma);
    let rows = x
        .snapshot_times()
        .into_iter()
        .zip(&snapshot_stats)
        .zip(&ms)
        .map(|((t, stats), &ms_gap)| {
            let w2_exact = match &oracle {
                Some(((m0, n0), ou)) => Some(ou.exact_w2(t, m0, n0)?),
                None => None,
            };
            let bound_w2 = theoretical_bound_w2(t, w2_0, alpha, beta, c_sigma)?;
            let bound_ms = theoretical_bound_ms(t, ms_0, alpha, beta, c_sigma)?;
            let w2_margin = MARGIN_SDS * stats.w2_sd;
            let ms_margin = MARGIN_SDS * stats.ms_sd;
            Ok(BoundRow {
                t,
                w2_empirical: stats.w2,
                w2_exact,
                ms_gap,
                bound_w2,
                bound_ms,
                violation_w2: stats.w2 > bound_w2 + w2_margin || w2_exact.is_some_and(|e| e > bound_w2),
                violation_ms: ms_gap > bound_ms + ms_margin,
                w2_margin,
                ms_margin,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let certificate_source = match cfg.certificate {
        CertificateSpec::Analytic => CertificateSource::Analytic,
        CertificateSpec::Sampled { .. } => CertificateSource::Sampled,
    };
    Ok(BoundReport { rows, w2_0, ms_0, certificate, certificate_source, config: cfg.clone() })
}

/// Run `cfg` on a dedicated pool of `threads` workers. The report does not
/// depend on the thread count.
pub fn run_experiment_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<BoundReport, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
    pool.install(|| run_experiment(cfg))
}

struct SnapshotStats {
    w2: f64,
    w2_sd: f64,
    ms_sd: f64,
}

fn cloud(e: &Ensemble, s: usize) -> Result<PointCloud, HarnessError> {
    Ok(PointCloud::new(e.n_traj, e.dim, e.snapshots[s].states.clone())?)
}

fn w2(method: &W2Method, a: &PointCloud, b: &PointCloud) -> Result<f64, HarnessError> {
    Ok(match method.sinkhorn_options() {
        None => wasserstein::w2_assignment_distance(a, b)?,
        Some(opts) => wasserstein::w2_sinkhorn(a, b, opts)?.0,
    })
}

/// Full-ensemble W2 at snapshot `s` plus the spread of W2 and mean-square gap
/// across [`SUB_ENSEMBLES`] contiguous blocks of trajectories.
fn snapshot_stats(x: &Ensemble, y: &Ensemble, s: usize, method: &W2Method) -> Result<SnapshotStats, HarnessError> {
    let (cx, cy) = (cloud(x, s)?, cloud(y, s)?);
    let full = w2(method, &cx, &cy)?;
    let gaps = simulate::pair_gaps(x, y, s);
    let block = x.n_traj / SUB_ENSEMBLES;
    let mut sub_w2 = Vec::with_capacity(SUB_ENSEMBLES);
    let mut sub_ms = Vec::with_capacity(SUB_ENSEMBLES);
    for k in 0..SUB_ENSEMBLES {
        let (lo, hi) = (k * block, (k + 1) * block);
        sub_w2.push(w2(method, &cx.slice(lo, hi), &cy.slice(lo, hi))?);
        sub_ms.push(gaps[lo..hi].iter().sum::<f64>() / block as f64);
    }
    Ok(SnapshotStats { w2: full, w2_sd: sample_sd(&sub_w2), ms_sd: sample_sd(&sub_ms) })
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}
