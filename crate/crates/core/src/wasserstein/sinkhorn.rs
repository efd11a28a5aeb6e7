use nalgebra::{DMatrix, DVector};

use super::{check_pair, squared_cost_matrix, PointCloud, TransportError, TransportPlan};

/// Tuning for [`w2_sinkhorn`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    pub epsilon: f64,
    /// Maximum absolute deviation of a row sum from `1/n` before rounding.
    pub tol: f64,
    /// Total iteration budget across all annealing stages.
    pub max_iter: usize,
}

impl SinkhornOptions {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon, tol: 1e-9, max_iter: 100_000 }
    }
}

// Annealing: start at max(eps, ANNEAL_START · max cost) and divide by
// ANNEAL_FACTOR per stage, warm-starting the potentials.
const ANNEAL_START: f64 = 1.0;
const ANNEAL_FACTOR: f64 = 4.0;
const STAGE_TOL: f64 = 1e-4;

/// Sinkhorn sweeps at the target epsilon before switching to Newton steps.
const SWEEPS_BEFORE_NEWTON: usize = 2_000;
/// Newton polishing uses a dense (2n−1)-dimensional solve; skipped above this size.
pub const NEWTON_MAX_N: usize = 512;
const NEWTON_MAX_STEPS: usize = 100;
const NEWTON_HALVINGS: usize = 12;
const NEWTON_DAMPING: [f64; 6] = [0.0, 1e-12, 1e-9, 1e-6, 1e-3, 1.0];

/// Entropic OT in the log domain, followed by rounding onto the exact
/// transport polytope. The returned distance is `sqrt(⟨plan, C⟩)` for the
/// rounded plan, an upper bound on the exact W2.
///
/// Epsilon is annealed down from the largest cost. At the target epsilon,
/// Sinkhorn sweeps that have not met `tol` after a fixed budget are followed
/// by damped Newton steps on the dual (for `n ≤ NEWTON_MAX_N`), which
/// resolves the slow modes plain sweeps exhibit at small epsilon.
pub fn w2_sinkhorn(
    x: &PointCloud,
    y: &PointCloud,
    opts: SinkhornOptions,
) -> Result<(f64, TransportPlan), TransportError> {
    check_pair(x, y)?;
    if !(opts.epsilon > 0.0 && opts.epsilon.is_finite()) {
        return Err(TransportError::InvalidEpsilon(opts.epsilon));
    }
    let n = x.len();
    let cost = squared_cost_matrix(x, y);
    let target = 1.0 / n as f64;
    let mut duals = Duals { f: vec![0.0; n], g: vec![0.0; n], n };

    let max_cost = cost.iter().cloned().fold(0.0, f64::max);
    let mut eps = (ANNEAL_START * max_cost).max(opts.epsilon);
    let mut iterations = 0;

    loop {
        let last_stage = eps <= opts.epsilon;
        let stage_tol = if last_stage { opts.tol } else { STAGE_TOL * target };
        let mut stage_sweeps = 0;
        let mut newton_done = false;
        loop {
            let violation = duals.sweep(&cost, eps);
            iterations += 1;
            stage_sweeps += 1;
            if violation <= stage_tol {
                break;
            }
            if last_stage && !newton_done && stage_sweeps >= SWEEPS_BEFORE_NEWTON && n <= NEWTON_MAX_N {
                newton_done = true;
                let (steps, violation) = duals.newton(&cost, eps, stage_tol);
                iterations += steps;
                if violation <= stage_tol {
                    break;
                }
            }
            if iterations >= opts.max_iter {
                return Err(TransportError::NotConverged { iterations, violation, tol: opts.tol });
            }
        }
        if last_stage {
            break;
        }
        eps = (eps / ANNEAL_FACTOR).max(opts.epsilon);
    }

    let mut mass = duals.plan(&cost, eps);
    round_to_feasible(&mut mass, n);
    let plan = TransportPlan::Dense { n, mass };
    let total = plan.cost(&cost).max(0.0);
    Ok((total.sqrt(), plan))
}

/// Dual potentials; the plan is `P_ij = exp((f_i + g_j − C_ij)/ε)`.
struct Duals {
    f: Vec<f64>,
    g: Vec<f64>,
    n: usize,
}

impl Duals {
    /// One pair of log-domain updates (g then f). Returns the largest marginal
    /// deviation seen, from the column sums before the g update and the row
    /// sums before the f update.
    fn sweep(&mut self, cost: &[f64], eps: f64) -> f64 {
        let n = self.n;
        let log_w = -(n as f64).ln();
        let target = 1.0 / n as f64;
        let mut scratch = vec![0.0; n];
        let mut violation: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                scratch[i] = (self.f[i] - cost[i * n + j]) / eps;
            }
            let lse = log_sum_exp(&scratch);
            violation = violation.max(((self.g[j] / eps + lse).exp() - target).abs());
            self.g[j] = eps * (log_w - lse);
        }
        for i in 0..n {
            let row = &cost[i * n..(i + 1) * n];
            for j in 0..n {
                scratch[j] = (self.g[j] - row[j]) / eps;
            }
            let lse = log_sum_exp(&scratch);
            violation = violation.max(((self.f[i] / eps + lse).exp() - target).abs());
            self.f[i] = eps * (log_w - lse);
        }
        violation
    }

    fn plan(&self, cost: &[f64], eps: f64) -> Vec<f64> {
        let n = self.n;
        let mut mass = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                mass[i * n + j] = ((self.f[i] + self.g[j] - cost[i * n + j]) / eps).exp();
            }
        }
        mass
    }

    fn marginal_residuals(&self, mass: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let n = self.n;
        let target = 1.0 / n as f64;
        let rows: Vec<f64> = (0..n).map(|i| mass[i * n..(i + 1) * n].iter().sum::<f64>() - target).collect();
        let cols: Vec<f64> = (0..n).map(|j| (0..n).map(|i| mass[i * n + j]).sum::<f64>() - target).collect();
        let worst = rows.iter().chain(&cols).fold(0.0f64, |m, v| m.max(v.abs()));
        (rows, cols, worst)
    }

    /// Damped Newton iterations on the convex dual
    /// `ε Σ P_ij − Σ a_i f_i − Σ b_j g_j`, with `g_{n−1}` pinned to remove the
    /// constant-shift null direction. A step is accepted only if it lowers the
    /// marginal violation. Returns `(steps taken, final violation)`.
    fn newton(&mut self, cost: &[f64], eps: f64, tol: f64) -> (usize, f64) {
        let n = self.n;
        let m = 2 * n - 1;
        let mut mass = self.plan(cost, eps);
        let (mut rows, mut cols, mut violation) = self.marginal_residuals(&mass);
        let mut steps = 0;
        while steps < NEWTON_MAX_STEPS && violation > tol {
            steps += 1;
            let mut h = DMatrix::<f64>::zeros(m, m);
            let mut rhs = DVector::<f64>::zeros(m);
            for i in 0..n {
                h[(i, i)] = (rows[i] + 1.0 / n as f64) / eps;
                rhs[i] = -rows[i];
                for j in 0..n - 1 {
                    let p = mass[i * n + j] / eps;
                    h[(i, n + j)] = p;
                    h[(n + j, i)] = p;
                }
            }
            for j in 0..n - 1 {
                h[(n + j, n + j)] = (cols[j] + 1.0 / n as f64) / eps;
                rhs[n + j] = -cols[j];
            }
            let scale = h.diagonal().amax();
            let (f0, g0) = (self.f.clone(), self.g.clone());
            let mut accepted = false;
            // Near-disconnected plans make the Hessian close to singular; fall
            // back to increasingly damped steps when the plain step fails.
            'damping: for damping in NEWTON_DAMPING {
                let mut damped = h.clone();
                for k in 0..m {
                    damped[(k, k)] += damping * scale;
                }
                let Some(delta) = damped.lu().solve(&rhs) else { continue };
                if delta.iter().any(|v| !v.is_finite()) {
                    continue;
                }
                let mut step = 1.0;
                for _ in 0..NEWTON_HALVINGS {
                    for i in 0..n {
                        self.f[i] = f0[i] + step * delta[i];
                    }
                    for j in 0..n - 1 {
                        self.g[j] = g0[j] + step * delta[n + j];
                    }
                    let trial = self.plan(cost, eps);
                    let (r, c, v) = self.marginal_residuals(&trial);
                    if v < violation {
                        mass = trial;
                        rows = r;
                        cols = c;
                        violation = v;
                        accepted = true;
                        break 'damping;
                    }
                    step *= 0.5;
                }
            }
            if !accepted {
                self.f = f0;
                self.g = g0;
                break;
            }
        }
        (steps, violation)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Project a nonnegative matrix onto the uniform transport polytope by
/// scaling rows and columns down to their targets and redistributing the
/// deficit as a rank-one correction.
fn round_to_feasible(mass: &mut [f64], n: usize) {
    let target = 1.0 / n as f64;
    for i in 0..n {
        let row = &mut mass[i * n..(i + 1) * n];
        let s: f64 = row.iter().sum();
        if s > target {
            let k = target / s;
            row.iter_mut().for_each(|m| *m *= k);
        }
    }
    for j in 0..n {
        let s: f64 = (0..n).map(|i| mass[i * n + j]).sum();
        if s > target {
            let k = target / s;
            for i in 0..n {
                mass[i * n + j] *= k;
            }
        }
    }
    let row_def: Vec<f64> = (0..n).map(|i| target - mass[i * n..(i + 1) * n].iter().sum::<f64>()).collect();
    let col_def: Vec<f64> = (0..n).map(|j| target - (0..n).map(|i| mass[i * n + j]).sum::<f64>()).collect();
    let total: f64 = row_def.iter().sum();
    if total > 0.0 {
        for i in 0..n {
            for j in 0..n {
                mass[i * n + j] += row_def[i].max(0.0) * col_def[j].max(0.0) / total;
            }
        }
    }
}
