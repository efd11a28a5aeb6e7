//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion, nonzero exit
//! status if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stochcontract::contraction::{self, MetricField};
use stochcontract::harness::{
    self, BoundReport, CertificateSpec, ExperimentConfig, GridSpec, InitCoupling, MetricSpec, SystemSpec, W2Method,
};
use stochcontract::model::{SamplingBox, SdeSystem};
use stochcontract::numerics::{self, Matrix, SymmetricMatrix};
use stochcontract::ou::OuSystem;
use stochcontract::simulate::{self, InitialSampler, TimeGrid};
use stochcontract::wasserstein::{self, GaussianLaw, PointCloud, SinkhornOptions};

const N_TRAJ: usize = 2000;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

fn ou_config(n_traj: usize) -> ExperimentConfig {
    ExperimentConfig {
        system: SystemSpec::Ou { a: vec![vec![1.0, 0.0], vec![0.0, 2.0]], mu: vec![0.0, 0.0], sigma: 0.5 },
        metric: MetricSpec::Identity,
        mu0: InitialSampler::Gaussian { mean: vec![1.0, 0.0], cov: vec![vec![0.1, 0.0], vec![0.0, 0.1]] },
        nu0: InitialSampler::Gaussian { mean: vec![0.0, 0.0], cov: vec![vec![0.1, 0.0], vec![0.0, 0.1]] },
        init_coupling: InitCoupling::Independent,
        grid: GridSpec { t_max: None, dt: 1e-3, snapshot_times: None },
        n_traj,
        master_seed: 20240601,
        w2_method: W2Method::Assignment,
        certificate: CertificateSpec::Analytic,
    }
}

fn ou_oracle() -> OuSystem {
    OuSystem::new(Matrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])), vec![0.0, 0.0], 0.5).unwrap()
}

fn initial_laws() -> (GaussianLaw, GaussianLaw) {
    let cov = SymmetricMatrix::from_diagonal(&[0.1, 0.1]).unwrap();
    (GaussianLaw::new(vec![1.0, 0.0], cov.clone()).unwrap(), GaussianLaw::new(vec![0.0, 0.0], cov).unwrap())
}

/// 1. Exact OU curve against the bound with zero tolerance, and its decay rate.
fn ou_bound_exact() -> (bool, String) {
    let ou = ou_oracle();
    let (mu0, nu0) = initial_laws();
    let k = ou.constants();
    let (alpha, beta, c_sigma) = (k.alpha, k.beta, k.c_sigma);
    let consts_ok = alpha == 1.0 && (beta - 1.0).abs() < 1e-12 && (c_sigma - 0.5).abs() < 1e-15;
    let grid = ou_config(N_TRAJ).grid.resolve(beta).unwrap();
    let times = grid.snapshot_times();
    let w2_0 = wasserstein::w2_gaussian(&mu0, &nu0).unwrap();
    let mut worst_gap = f64::NEG_INFINITY;
    let mut exact = Vec::new();
    for &t in &times {
        let e = ou.exact_w2(t, &mu0, &nu0).unwrap();
        let b = harness::theoretical_bound_w2(t, w2_0, alpha, beta, c_sigma).unwrap();
        worst_gap = worst_gap.max(e - b);
        exact.push(e);
    }
    let (rate, _, r2) = harness::fit_decay_rate(&times, &exact, 0.0).unwrap();
    let pass = consts_ok && times.len() == 26 && worst_gap <= 0.0 && (rate - 1.0).abs() < 1e-6;
    (
        pass,
        format!(
            "{} snapshots, max(w2_exact - bound_w2) = {worst_gap:.4}, fitted rate = {rate:.9} (r^2 = {r2:.12})",
            times.len()
        ),
    )
}

/// 2. Empirical assignment W2 against the exact OU curve, no W2 violations.
fn monte_carlo_agreement(rep: &BoundReport) -> (bool, String) {
    let allowance_abs = 3.0 * (N_TRAJ as f64).powf(-0.25);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_t = 0.0;
    for r in &rep.rows {
        let exact = r.w2_exact.expect("OU report carries exact values");
        let allowance = (0.1 * exact).max(allowance_abs);
        let excess = (r.w2_empirical - exact).abs() - allowance;
        if excess > worst_excess {
            worst_excess = excess;
            worst_t = r.t;
        }
    }
    let violations = rep.rows.iter().filter(|r| r.violation_w2).count();
    (
        worst_excess <= 0.0 && violations == 0 && rep.rows.len() == 26,
        format!(
            "max(|w2_emp - w2_exact| - allowance) = {worst_excess:.4} at t = {worst_t:.3}, W2 violations = {violations}"
        ),
    )
}

/// 3. Mean-square gap against `e^{-2t} ms_0 + 0.5` plus the statistical margin.
fn mean_square_bound(rep: &BoundReport) -> (bool, String) {
    let mut worst = f64::NEG_INFINITY;
    for r in &rep.rows {
        let bound = (-2.0 * r.t).exp() * rep.ms_0 + 0.5;
        worst = worst.max(r.ms_gap - (bound + r.ms_margin));
        worst = worst.max(if r.violation_ms { f64::INFINITY } else { f64::NEG_INFINITY });
    }
    (worst <= 0.0, format!("ms_0 = {:.4}, max(ms_gap - bound - margin) = {worst:.4}", rep.ms_0))
}

/// 4. Assignment against permutation brute force.
fn exact_ot_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(2..=7);
        let d = rng.gen_range(1..=3);
        let x = random_cloud(&mut rng, n, d);
        let y = random_cloud(&mut rng, n, d);
        let brute = wasserstein::w2_bruteforce(&x, &y).unwrap();
        let fast = wasserstein::w2_assignment_distance(&x, &y).unwrap();
        worst = worst.max((brute - fast).abs());
    }
    (worst <= 1e-10, format!("200 instances, max |assignment - brute force| = {worst:.3e}"))
}

/// 5. Sinkhorn primal cost dominates the exact cost and approaches it as ε shrinks.
fn sinkhorn_convergence() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scales = [1.0, 0.1, 0.01];
    let mut errors = vec![Vec::new(); scales.len()];
    let mut below = 0;
    let mut failures = Vec::new();
    for _ in 0..20 {
        let x = random_cloud(&mut rng, 50, 2);
        let y = random_cloud(&mut rng, 50, 2);
        let exact = wasserstein::w2_assignment_distance(&x, &y).unwrap();
        let mut costs = wasserstein::squared_cost_matrix(&x, &y);
        costs.sort_by(f64::total_cmp);
        let median = costs[costs.len() / 2];
        for (k, s) in scales.iter().enumerate() {
            match wasserstein::w2_sinkhorn(&x, &y, SinkhornOptions::new(s * median)) {
                Ok((d, _)) => {
                    // Feasible-plan cost: below exact only by floating-point roundoff.
                    if d * d < exact * exact * (1.0 - 1e-12) {
                        below += 1;
                    }
                    errors[k].push(d - exact);
                }
                Err(e) => failures.push(e.to_string()),
            }
        }
    }
    if !failures.is_empty() {
        return (false, format!("{} solver failures, first: {}", failures.len(), failures[0]));
    }
    let medians: Vec<f64> = errors.iter_mut().map(|e| median(e)).collect();
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    (
        below == 0 && decreasing,
        format!("primal below exact: {below}; median error by eps scale {scales:?}: {medians:.4?}"),
    )
}

/// 6. Gaussian W2 symmetry, translation, scaling, equal-covariance reduction.
fn gaussian_properties() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut sym, mut trans, mut scale, mut eq): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..500 {
        let d = rng.gen_range(1..=5);
        let a = random_gaussian(&mut rng, d);
        let b = random_gaussian(&mut rng, d);
        let ab = wasserstein::w2_gaussian(&a, &b).unwrap();
        sym = sym.max((ab - wasserstein::w2_gaussian(&b, &a).unwrap()).abs());
        let shift: Vec<f64> = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let moved = wasserstein::w2_gaussian(&a.affine(1.0, &shift), &b.affine(1.0, &shift)).unwrap();
        trans = trans.max((moved - ab).abs());
        let s = rng.gen_range(0.1..5.0);
        let zero = vec![0.0; d];
        let scaled = wasserstein::w2_gaussian(&a.affine(s, &zero), &b.affine(s, &zero)).unwrap();
        scale = scale.max((scaled - s * ab).abs());
        let same_cov = GaussianLaw::new(b.mean.clone(), a.cov.clone()).unwrap();
        let mean_dist = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        eq = eq.max((wasserstein::w2_gaussian(&a, &same_cov).unwrap() - mean_dist).abs());
    }
    (
        sym <= 1e-10 && trans <= 1e-10 && scale <= 1e-9 && eq <= 1e-10,
        format!("max errors: symmetry {sym:.2e}, translation {trans:.2e}, scale {scale:.2e}, equal-cov {eq:.2e}"),
    )
}

/// 7. Sampled contraction rates for linear and quartic drifts.
fn contraction_certification() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_rel: f64 = 0.0;
    for k in 0..50 {
        let d = rng.gen_range(1..=5);
        let b = Matrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let skew = Matrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let a = &b * b.transpose() + Matrix::identity(d, d) * 0.1 + (&skew - skew.transpose());
        let want = numerics::sym_part_extremes(&(&a + a.transpose())).unwrap().0 / 2.0;
        let system = SdeSystem::ou(a, vec![0.0; d], 0.3).unwrap();
        let sbox = SamplingBox::cube(d, 2.0, 1.0, 64, k).unwrap();
        let (beta, _) = contraction::estimate_contraction_rate(&system, &MetricField::identity(d), &sbox).unwrap();
        worst_rel = worst_rel.max((beta - want).abs() / want);
    }
    let mut worst_quartic = f64::INFINITY;
    for (k, (d, half)) in [(1, 0.5), (2, 1.0), (3, 3.0), (5, 10.0), (4, 100.0)].into_iter().enumerate() {
        let system = SdeSystem::gradient_quartic(d, 0.2);
        let sbox = SamplingBox::cube(d, half, 1.0, 500, 100 + k as u64).unwrap();
        let cert = contraction::certify(&system, &MetricField::identity(d), &sbox).unwrap();
        if !cert.contracting {
            worst_quartic = f64::NEG_INFINITY;
        }
        worst_quartic = worst_quartic.min(cert.beta);
    }
    (
        worst_rel <= 0.01 && worst_quartic >= 1.0 - 1e-6,
        format!("linear: max relative beta error {worst_rel:.2e}; quartic: min beta {worst_quartic:.9}"),
    )
}

/// 8. Ensemble mean and covariance against the closed-form OU moments.
fn simulator_fidelity() -> (bool, String) {
    let cfg = ou_config(N_TRAJ);
    let system = cfg.system.build().unwrap();
    let ou = ou_oracle();
    let (mu0, nu0) = initial_laws();
    let grid = TimeGrid::new(3.0, 1e-3, &[0.5, 1.0, 3.0]).unwrap();
    let n = N_TRAJ as f64;
    let mut worst_z: f64 = 0.0;
    for (tag, sampler, law0) in [("mu", &cfg.mu0, &mu0), ("nu", &cfg.nu0, &nu0)] {
        let ens = simulate::simulate_ensemble(&system, sampler, N_TRAJ, &grid, cfg.master_seed, tag).unwrap();
        for (s, t) in ens.snapshot_times().into_iter().enumerate() {
            let law = ou.law(t, law0).unwrap();
            let cov = law.cov.as_matrix();
            let mean = ens.mean(s);
            let emp_cov = ens.covariance(s);
            for i in 0..2 {
                let se = (cov[(i, i)] / n).sqrt();
                worst_z = worst_z.max((mean[i] - law.mean[i]).abs() / se);
                for j in 0..=i {
                    let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / n).sqrt();
                    worst_z = worst_z.max((emp_cov[(i, j)] - cov[(i, j)]).abs() / se);
                }
            }
        }
    }
    (worst_z <= 4.0, format!("2 laws x 3 times, max |empirical - exact| / SE = {worst_z:.3}"))
}

/// 9. Bit-identical reports across repeats and thread counts.
fn determinism(reference: &BoundReport) -> (bool, String) {
    let cfg = ou_config(N_TRAJ);
    let one = harness::run_experiment_with_threads(&cfg, 1).unwrap();
    let four = harness::run_experiment_with_threads(&cfg, 4).unwrap();
    let same = one == *reference && four == *reference;
    let json_same = one.to_json() == reference.to_json() && four.to_json() == reference.to_json();
    (same && json_same, format!("default pool vs 1 thread vs 4 threads: reports identical = {}", same && json_same))
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointCloud {
    PointCloud::new(n, d, (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

fn random_gaussian(rng: &mut ChaCha8Rng, d: usize) -> GaussianLaw {
    let b = Matrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let cov = SymmetricMatrix::new(&b * b.transpose() + Matrix::identity(d, d) * 0.05).unwrap();
    GaussianLaw::new((0..d).map(|_| rng.gen_range(-3.0..3.0)).collect(), cov).unwrap()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn timed<F: FnOnce() -> (bool, String)>(
    id: u32,
    name: &'static str,
    budget_secs: u64,
    f: F,
) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = f();
    Outcome { id, name, pass, detail, elapsed: start.elapsed(), budget: Duration::from_secs(budget_secs) }
}

fn main() -> ExitCode {
    let mut outcomes = vec![
        timed(1, "OU exact W2 under bound, decay rate 1", 1, ou_bound_exact),
        timed(4, "assignment equals brute force", 10, exact_ot_oracle),
        timed(5, "Sinkhorn dominates exact and converges in eps", 30, sinkhorn_convergence),
        timed(6, "Gaussian W2 properties", 5, gaussian_properties),
        timed(7, "contraction certification", 30, contraction_certification),
    ];

    let start = Instant::now();
    let report = harness::run_experiment(&ou_config(N_TRAJ));
    let run_time = start.elapsed();
    match report {
        Ok(rep) => {
            let mut o2 = timed(2, "Monte Carlo W2 agreement with exact OU", 120, || monte_carlo_agreement(&rep));
            o2.elapsed += run_time;
            outcomes.push(o2);
            let mut o3 = timed(3, "mean-square bound", 120, || mean_square_bound(&rep));
            o3.elapsed += run_time;
            outcomes.push(o3);
            let mut o8 = timed(8, "simulator moments against OU closed form", 120, simulator_fidelity);
            o8.elapsed += run_time;
            outcomes.push(o8);
            let mut o9 = timed(9, "deterministic reports across thread counts", 120, || determinism(&rep));
            o9.elapsed += run_time;
            outcomes.push(o9);
        }
        Err(e) => {
            for (id, name) in [
                (2, "Monte Carlo W2 agreement with exact OU"),
                (3, "mean-square bound"),
                (8, "simulator moments against OU closed form"),
                (9, "deterministic reports across thread counts"),
            ] {
                outcomes.push(Outcome {
                    id,
                    name,
                    pass: false,
                    detail: format!("run_experiment failed: {e}"),
                    elapsed: run_time,
                    budget: Duration::from_secs(120),
                });
            }
        }
    }

    outcomes.sort_by_key(|o| o.id);
    let mut failed = 0;
    for o in &outcomes {
        let in_time = o.elapsed <= o.budget;
        let ok = o.pass && in_time;
        if !ok {
            failed += 1;
        }
        let timing = format!("{:.2}s of {}s", o.elapsed.as_secs_f64(), o.budget.as_secs());
        let late = if in_time { "" } else { " [over time budget]" };
        println!("[{}] #{} {}: {} ({timing}){late}", if ok { "PASS" } else { "FAIL" }, o.id, o.name, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
