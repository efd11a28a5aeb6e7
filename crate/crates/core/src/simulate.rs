//! Euler–Maruyama ensembles with independent per-trajectory noise.
//!
//! Every trajectory owns a ChaCha8 stream keyed by
//! `(master_seed, fnv1a(law_tag), trajectory_index, domain)`; initial states
//! come from a separate stream keyed by an init tag. Standard normals use
//! `rand_distr::StandardNormal` (ziggurat). Output therefore does not depend
//! on how trajectories are scheduled across threads.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, SdeSystem};
use crate::numerics::{self, Matrix, NumericsError, SymmetricMatrix};

/// Largest number of Euler steps a grid may request.
pub const MAX_STEPS: usize = 10_000_000;

/// Trajectories whose Euclidean norm exceeds this are aborted.
pub const BLOW_UP_NORM: f64 = 1e8;

const DOMAIN_NOISE: u64 = 0x006e_6f69_7365; // "noise"
const DOMAIN_INIT: u64 = 0x696e_6974; // "init"

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid initial sampler: {0}")]
    InvalidSampler(String),
    #[error("trajectory {trajectory} blew up at step {step} (t = {t})")]
    BlowUp { trajectory: usize, step: usize, t: f64 },
    #[error("ensembles are not comparable: {0}")]
    Mismatch(String),
    #[error("ensemble must contain at least one trajectory")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// 64-bit FNV-1a of a tag, used to key random streams.
pub fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// ChaCha8 stream whose 256-bit key is `(master_seed, fnv1a(tag), index, domain)`.
pub fn stream(master_seed: u64, tag: &str, index: u64, domain: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (k, word) in [master_seed, fnv1a(tag), index, domain].iter().enumerate() {
        key[8 * k..8 * k + 8].copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Noise stream of trajectory `index` for law `law_tag`.
pub fn noise_stream(master_seed: u64, law_tag: &str, index: usize) -> ChaCha8Rng {
    stream(master_seed, law_tag, index as u64, DOMAIN_NOISE)
}

/// Stream that draws all initial states for `init_tag`.
pub fn init_stream(master_seed: u64, init_tag: &str) -> ChaCha8Rng {
    stream(master_seed, init_tag, 0, DOMAIN_INIT)
}

/// Uniform step grid on `[0, t_max]` with snapshot times snapped to the
/// nearest grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_max: f64,
    dt: f64,
    n_steps: usize,
    snapshot_steps: Vec<usize>,
}

impl TimeGrid {
    pub fn new(t_max: f64, dt: f64, snapshot_times: &[f64]) -> Result<Self, SimulationError> {
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(SimulationError::InvalidGrid(format!("t_max must be positive, got {t_max}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimulationError::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        let ratio = t_max / dt;
        if ratio > MAX_STEPS as f64 {
            return Err(SimulationError::InvalidGrid(format!("t_max/dt = {ratio:e} exceeds {MAX_STEPS}")));
        }
        let n_steps = (ratio - 1e-9).ceil().max(1.0) as usize;
        if snapshot_times.is_empty() {
            return Err(SimulationError::InvalidGrid("at least one snapshot time is required".into()));
        }
        let mut snapshot_steps = Vec::with_capacity(snapshot_times.len());
        for &t in snapshot_times {
            if !(t >= 0.0 && t <= t_max) {
                return Err(SimulationError::InvalidGrid(format!("snapshot time {t} outside [0, {t_max}]")));
            }
            let step = ((t / dt).round() as usize).min(n_steps);
            if let Some(&last) = snapshot_steps.last() {
                if step <= last {
                    return Err(SimulationError::InvalidGrid(format!(
                        "snapshot times must be increasing and at least dt apart (t = {t})"
                    )));
                }
            }
            snapshot_steps.push(step);
        }
        Ok(Self { t_max, dt, n_steps, snapshot_steps })
    }

    /// `t = 0` plus `n_geometric` geometrically spaced times from
    /// `t_max/200` to `t_max`.
    pub fn geometric(t_max: f64, dt: f64, n_geometric: usize) -> Result<Self, SimulationError> {
        Self::new(t_max, dt, &geometric_times(t_max, n_geometric))
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn snapshot_steps(&self) -> &[usize] {
        &self.snapshot_steps
    }

    /// Snapshot times as grid times `step · dt`.
    pub fn snapshot_times(&self) -> Vec<f64> {
        self.snapshot_steps.iter().map(|&k| self.time_of(k)).collect()
    }

    fn time_of(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }
}

/// `[0, t_max/200 · r^k for k in 0..n]` with `r` chosen so the last equals `t_max`.
pub fn geometric_times(t_max: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0];
    if n == 0 {
        return out;
    }
    let first = t_max / 200.0;
    if n == 1 {
        out.push(t_max);
        return out;
    }
    let ratio = (t_max / first).powf(1.0 / (n - 1) as f64);
    out.extend((0..n).map(|k| if k == n - 1 { t_max } else { first * ratio.powi(k as i32) }));
    out
}

/// Initial-condition law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialSampler {
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Point { x0: Vec<f64> },
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
}

impl InitialSampler {
    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian { mean, .. } => mean.len(),
            Self::Point { x0 } => x0.len(),
            Self::UniformBox { lower, .. } => lower.len(),
        }
    }

    /// Mean and covariance when the law is Gaussian (a point mass counts, with
    /// zero covariance).
    pub fn gaussian_moments(&self) -> Option<(Vec<f64>, SymmetricMatrix)> {
        match self {
            Self::Gaussian { mean, cov } => Some((mean.clone(), rows_to_symmetric(cov).ok()?)),
            Self::Point { x0 } => Some((x0.clone(), SymmetricMatrix::new(Matrix::zeros(x0.len(), x0.len())).ok()?)),
            Self::UniformBox { .. } => None,
        }
    }

    fn prepare(&self) -> Result<PreparedSampler, SimulationError> {
        match self {
            Self::Gaussian { mean, cov } => {
                let cov = rows_to_symmetric(cov).map_err(|e| SimulationError::InvalidSampler(e.to_string()))?;
                if cov.dim() != mean.len() {
                    return Err(SimulationError::InvalidSampler("covariance and mean dimensions differ".into()));
                }
                let root = numerics::psd_sqrt(&cov)
                    .map_err(|e| SimulationError::InvalidSampler(format!("covariance: {e}")))?;
                check_finite_vec(mean)?;
                Ok(PreparedSampler::Gaussian { mean: mean.clone(), root: root.into_matrix() })
            }
            Self::Point { x0 } => {
                check_finite_vec(x0)?;
                Ok(PreparedSampler::Point(x0.clone()))
            }
            Self::UniformBox { lower, upper } => {
                if lower.len() != upper.len() || !lower.iter().zip(upper).all(|(l, u)| l < u) {
                    return Err(SimulationError::InvalidSampler("uniform box needs lower < upper".into()));
                }
                check_finite_vec(lower)?;
                check_finite_vec(upper)?;
                Ok(PreparedSampler::Uniform { lower: lower.clone(), upper: upper.clone() })
            }
        }
    }
}

fn check_finite_vec(v: &[f64]) -> Result<(), SimulationError> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(SimulationError::InvalidSampler("vectors must be non-empty and finite".into()));
    }
    Ok(())
}

pub(crate) fn rows_to_symmetric(rows: &[Vec<f64>]) -> Result<SymmetricMatrix, NumericsError> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(NumericsError::NotSquare { rows: n, cols: rows.first().map_or(0, Vec::len) });
    }
    SymmetricMatrix::new(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

enum PreparedSampler {
    Gaussian { mean: Vec<f64>, root: Matrix },
    Point(Vec<f64>),
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
}

impl PreparedSampler {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Self::Gaussian { mean, root } => {
                let z: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
                (0..mean.len()).map(|i| mean[i] + (0..z.len()).map(|j| root[(i, j)] * z[j]).sum::<f64>()).collect()
            }
            Self::Point(x0) => x0.clone(),
            Self::Uniform { lower, upper } => lower.iter().zip(upper).map(|(&l, &u)| rng.gen_range(l..u)).collect(),
        }
    }
}

/// States of one trajectory at the grid's snapshot times, flattened
/// snapshot-major (`n_snapshots × d`).
pub type Trajectory = Vec<f64>;

/// Explicit Euler–Maruyama:
/// `X_{k+1} = X_k + f(X_k) Δt + σ(X_k, t_k) √Δt ξ_k`, `ξ_k ~ N(0, I)`.
pub fn euler_maruyama(
    system: &SdeSystem,
    x0: &[f64],
    grid: &TimeGrid,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory, SimulationError> {
    let d = system.dim();
    if x0.len() != d {
        return Err(NumericsError::DimensionMismatch { expected: d, got: x0.len() }.into());
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SimulationError::BlowUp { trajectory: 0, step: 0, t: 0.0 });
    }
    let steps = grid.snapshot_steps();
    let last = *steps.last().expect("grid has snapshots");
    let sqrt_dt = grid.dt.sqrt();
    let mut out = Vec::with_capacity(steps.len() * d);
    let mut x = x0.to_vec();
    let mut f = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut sigma = Matrix::zeros(d, d);
    let mut next = 0;
    for k in 0..=last {
        while next < steps.len() && steps[next] == k {
            out.extend_from_slice(&x);
            next += 1;
        }
        if k == last {
            break;
        }
        let t = grid.time_of(k);
        system.drift_into(&x, &mut f);
        system.diffusion_into(&x, t, &mut sigma);
        for v in xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mut norm2 = 0.0;
        for i in 0..d {
            let mut noise = 0.0;
            for j in 0..d {
                noise += sigma[(i, j)] * xi[j];
            }
            x[i] += f[i] * grid.dt + sqrt_dt * noise;
            norm2 += x[i] * x[i];
        }
        if norm2.is_nan() || norm2.sqrt() > BLOW_UP_NORM {
            return Err(SimulationError::BlowUp { trajectory: 0, step: k + 1, t: grid.time_of(k + 1) });
        }
    }
    Ok(out)
}

/// One snapshot of an ensemble: `n_traj × d` states, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub states: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub n_traj: usize,
    pub dim: usize,
    pub snapshots: Vec<Snapshot>,
    pub master_seed: u64,
    pub law_tag: String,
}

impl Ensemble {
    pub fn snapshot_times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    /// State of trajectory `i` at snapshot `s`.
    pub fn state(&self, s: usize, i: usize) -> &[f64] {
        &self.snapshots[s].states[i * self.dim..(i + 1) * self.dim]
    }

    /// Sample mean at snapshot `s`.
    pub fn mean(&self, s: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.n_traj {
            for (acc, v) in m.iter_mut().zip(self.state(s, i)) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n_traj as f64);
        m
    }

    /// Unbiased sample covariance at snapshot `s`.
    pub fn covariance(&self, s: usize) -> Matrix {
        let m = self.mean(s);
        let d = self.dim;
        let mut c = Matrix::zeros(d, d);
        for i in 0..self.n_traj {
            let x = self.state(s, i);
            for a in 0..d {
                for b in 0..d {
                    c[(a, b)] += (x[a] - m[a]) * (x[b] - m[b]);
                }
            }
        }
        c / (self.n_traj.max(2) - 1) as f64
    }

    /// CSV with header `t,traj,x1,...,xd`, one row per (snapshot, trajectory).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string(), "traj".to_string()];
        header.extend((1..=self.dim).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        for snap in &self.snapshots {
            for i in 0..self.n_traj {
                let mut rec = vec![snap.t.to_string(), i.to_string()];
                rec.extend(snap.states[i * self.dim..(i + 1) * self.dim].iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Little-endian f64 states, row-major over (snapshot, trajectory, coordinate),
    /// plus a JSON sidecar at `<path>.json`.
    pub fn write_binary(&self, path: &Path) -> Result<(), SimulationError> {
        let io_err = |p: &Path, source| SimulationError::Io { path: p.display().to_string(), source };
        let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
        for snap in &self.snapshots {
            for v in &snap.states {
                w.write_all(&v.to_le_bytes()).map_err(|e| io_err(path, e))?;
            }
        }
        w.flush().map_err(|e| io_err(path, e))?;
        let sidecar_path = sidecar_path(path);
        let sidecar = BinarySidecar {
            layout: "f64-le row-major [snapshot][trajectory][coordinate]".into(),
            n_snapshots: self.snapshots.len(),
            n_traj: self.n_traj,
            dim: self.dim,
            snapshot_times: self.snapshot_times(),
            master_seed: self.master_seed,
            law_tag: self.law_tag.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        std::fs::write(&sidecar_path, json).map_err(|e| io_err(&sidecar_path, e))
    }

    /// Inverse of [`Ensemble::write_binary`].
    pub fn read_binary(path: &Path) -> Result<Self, SimulationError> {
        let io_err = |p: &Path, source| SimulationError::Io { path: p.display().to_string(), source };
        let sidecar_path = sidecar_path(path);
        let text = std::fs::read_to_string(&sidecar_path).map_err(|e| io_err(&sidecar_path, e))?;
        let meta: BinarySidecar = serde_json::from_str(&text).map_err(|e| {
            io_err(&sidecar_path, std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })?;
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        let per = meta.n_traj * meta.dim;
        if bytes.len() != 8 * per * meta.n_snapshots || meta.snapshot_times.len() != meta.n_snapshots {
            return Err(io_err(path, std::io::Error::new(std::io::ErrorKind::InvalidData, "size does not match sidecar")));
        }
        let values: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let snapshots = meta
            .snapshot_times
            .iter()
            .enumerate()
            .map(|(s, &t)| Snapshot { t, states: values[s * per..(s + 1) * per].to_vec() })
            .collect();
        Ok(Self { n_traj: meta.n_traj, dim: meta.dim, snapshots, master_seed: meta.master_seed, law_tag: meta.law_tag })
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[derive(Debug, Serialize, Deserialize)]
struct BinarySidecar {
    layout: String,
    n_snapshots: usize,
    n_traj: usize,
    dim: usize,
    snapshot_times: Vec<f64>,
    master_seed: u64,
    law_tag: String,
}

/// Simulate `n_traj` trajectories of `system` from `sampler`. Initial states
/// come from the init stream keyed by `law_tag`.
pub fn simulate_ensemble(
    system: &SdeSystem,
    sampler: &InitialSampler,
    n_traj: usize,
    grid: &TimeGrid,
    master_seed: u64,
    law_tag: &str,
) -> Result<Ensemble, SimulationError> {
    simulate_ensemble_with_init(system, sampler, n_traj, grid, master_seed, law_tag, law_tag)
}

/// As [`simulate_ensemble`], but initial states are drawn from the init stream
/// keyed by `init_tag`. Two ensembles sharing an `init_tag` (and sampler
/// shape) start from synchronously coupled initial conditions while keeping
/// independent noise.
pub fn simulate_ensemble_with_init(
    system: &SdeSystem,
    sampler: &InitialSampler,
    n_traj: usize,
    grid: &TimeGrid,
    master_seed: u64,
    law_tag: &str,
    init_tag: &str,
) -> Result<Ensemble, SimulationError> {
    if n_traj == 0 {
        return Err(SimulationError::Empty);
    }
    let d = system.dim();
    if sampler.dim() != d {
        return Err(NumericsError::DimensionMismatch { expected: d, got: sampler.dim() }.into());
    }
    let prepared = sampler.prepare()?;
    let mut init_rng = init_stream(master_seed, init_tag);
    let initial: Vec<Vec<f64>> = (0..n_traj).map(|_| prepared.draw(&mut init_rng)).collect();

    let trajectories: Vec<Trajectory> = initial
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let mut rng = noise_stream(master_seed, law_tag, i);
            euler_maruyama(system, x0, grid, &mut rng).map_err(|e| match e {
                SimulationError::BlowUp { step, t, .. } => SimulationError::BlowUp { trajectory: i, step, t },
                other => other,
            })
        })
        .collect::<Result<_, _>>()?;

    let snapshots = grid
        .snapshot_times()
        .into_iter()
        .enumerate()
        .map(|(s, t)| {
            let mut states = Vec::with_capacity(n_traj * d);
            for traj in &trajectories {
                states.extend_from_slice(&traj[s * d..(s + 1) * d]);
            }
            Snapshot { t, states }
        })
        .collect();
    Ok(Ensemble { n_traj, dim: d, snapshots, master_seed, law_tag: law_tag.to_string() })
}

fn check_comparable(x: &Ensemble, y: &Ensemble) -> Result<(), SimulationError> {
    if x.n_traj != y.n_traj || x.dim != y.dim {
        return Err(SimulationError::Mismatch(format!(
            "shapes {}x{} and {}x{}",
            x.n_traj, x.dim, y.n_traj, y.dim
        )));
    }
    if x.snapshot_times() != y.snapshot_times() {
        return Err(SimulationError::Mismatch("snapshot times differ".into()));
    }
    Ok(())
}

/// Per-pair squared gaps `‖X_i(s) − Y_i(s)‖²` at snapshot `s`.
pub fn pair_gaps(x: &Ensemble, y: &Ensemble, s: usize) -> Vec<f64> {
    (0..x.n_traj)
        .map(|i| x.state(s, i).iter().zip(y.state(s, i)).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect()
}

/// Empirical `E‖X_t − Y_t‖²` at each snapshot under the index pairing.
pub fn mean_square_gap(x: &Ensemble, y: &Ensemble) -> Result<Vec<f64>, SimulationError> {
    check_comparable(x, y)?;
    Ok((0..x.snapshots.len())
        .map(|s| pair_gaps(x, y, s).iter().sum::<f64>() / x.n_traj as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou_2d() -> SdeSystem {
        SdeSystem::ou(Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0])), vec![0.0, 0.0], 0.5)
            .unwrap()
    }

    #[test]
    fn grid_snaps_and_validates() {
        let g = TimeGrid::new(1.0, 0.1, &[0.0, 0.26, 1.0]).unwrap();
        assert_eq!(g.snapshot_steps(), &[0, 3, 10]);
        assert_eq!(g.n_steps(), 10);
        assert!(TimeGrid::new(1.0, 0.1, &[]).is_err());
        assert!(TimeGrid::new(1.0, 0.1, &[0.5, 0.2]).is_err());
        assert!(TimeGrid::new(1.0, 0.1, &[1.5]).is_err());
        assert!(TimeGrid::new(1.0, 1e-8, &[1.0]).is_err());
        assert!(TimeGrid::new(-1.0, 0.1, &[0.0]).is_err());
    }

    #[test]
    fn geometric_grid_shape() {
        let times = geometric_times(6.0, 25);
        assert_eq!(times.len(), 26);
        assert_eq!(times[0], 0.0);
        assert_eq!(*times.last().unwrap(), 6.0);
        assert!(times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn noise_free_decay_matches_ode() {
        let sys = SdeSystem::scalar_linear(1.0, 0.0);
        let grid = TimeGrid::new(1.0, 1e-4, &[1.0]).unwrap();
        let traj = euler_maruyama(&sys, &[1.0], &grid, &mut noise_stream(0, "mu", 0)).unwrap();
        assert!((traj[0] - (-1.0f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn euler_error_halves_with_dt() {
        let sys = SdeSystem::scalar_linear(1.0, 0.0);
        let err = |dt: f64| {
            let grid = TimeGrid::new(1.0, dt, &[1.0]).unwrap();
            let x = euler_maruyama(&sys, &[1.0], &grid, &mut noise_stream(0, "mu", 0)).unwrap()[0];
            (x - (-1.0f64).exp()).abs()
        };
        let ratio = err(1e-3) / err(5e-4);
        assert!((ratio - 2.0).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn brownian_mean_within_four_standard_errors() {
        let sys = SdeSystem::new(2, |_, out| out.fill(0.0), |_, _, out| out.fill_with_identity());
        let t = 1.0;
        let grid = TimeGrid::new(t, 0.01, &[t]).unwrap();
        let n = 10_000;
        let ens = simulate_ensemble(&sys, &InitialSampler::Point { x0: vec![0.5, -1.0] }, n, &grid, 17, "mu").unwrap();
        let m = ens.mean(0);
        let tol = 4.0 * (t / n as f64).sqrt();
        assert!((m[0] - 0.5).abs() < tol && (m[1] + 1.0).abs() < tol, "{m:?}");
    }

    #[test]
    fn blow_up_reported_with_index() {
        let sys = SdeSystem::scalar_linear(-50.0, 0.0);
        let grid = TimeGrid::new(1.0, 0.01, &[1.0]).unwrap();
        let err = simulate_ensemble(&sys, &InitialSampler::Point { x0: vec![1.0] }, 3, &grid, 0, "mu").unwrap_err();
        assert!(matches!(err, SimulationError::BlowUp { trajectory: 0, .. }));
    }

    #[test]
    fn ensembles_are_deterministic_and_tagged() {
        let sys = ou_2d();
        let grid = TimeGrid::new(1.0, 0.01, &[0.0, 0.5, 1.0]).unwrap();
        let sampler = InitialSampler::Gaussian { mean: vec![1.0, 0.0], cov: vec![vec![0.1, 0.0], vec![0.0, 0.1]] };
        let a = simulate_ensemble(&sys, &sampler, 50, &grid, 99, "mu").unwrap();
        let b = simulate_ensemble(&sys, &sampler, 50, &grid, 99, "mu").unwrap();
        assert_eq!(a, b);

        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| simulate_ensemble(&sys, &sampler, 50, &grid, 99, "mu").unwrap());
        assert_eq!(a, c);

        let mut mu = noise_stream(99, "mu", 0);
        let mut nu = noise_stream(99, "nu", 0);
        let a0: f64 = mu.sample(StandardNormal);
        let b0: f64 = nu.sample(StandardNormal);
        assert_ne!(a0, b0);
        let other = simulate_ensemble(&sys, &sampler, 50, &grid, 99, "nu").unwrap();
        assert_ne!(a.snapshots[1].states, other.snapshots[1].states);
    }

    #[test]
    fn mean_square_gap_examples() {
        let sys = ou_2d();
        let grid = TimeGrid::new(1.0, 0.01, &[0.0, 1.0]).unwrap();
        let a = simulate_ensemble(&sys, &InitialSampler::Point { x0: vec![1.0, 2.0] }, 20, &grid, 1, "mu").unwrap();
        assert_eq!(mean_square_gap(&a, &a).unwrap(), vec![0.0, 0.0]);

        let b = simulate_ensemble(&sys, &InitialSampler::Point { x0: vec![-1.0, 0.0] }, 20, &grid, 1, "nu").unwrap();
        let gap = mean_square_gap(&a, &b).unwrap();
        assert_eq!(gap[0], 8.0);

        let short = simulate_ensemble(&sys, &InitialSampler::Point { x0: vec![-1.0, 0.0] }, 10, &grid, 1, "nu").unwrap();
        assert!(matches!(mean_square_gap(&a, &short), Err(SimulationError::Mismatch(_))));
    }

    #[test]
    fn mean_square_gap_at_zero_equals_direct_computation() {
        let sys = ou_2d();
        let grid = TimeGrid::new(0.5, 0.01, &[0.0, 0.5]).unwrap();
        let gx = InitialSampler::Gaussian { mean: vec![1.0, 0.0], cov: vec![vec![0.1, 0.02], vec![0.02, 0.3]] };
        let gy = InitialSampler::UniformBox { lower: vec![-1.0, -1.0], upper: vec![1.0, 0.5] };
        let x = simulate_ensemble(&sys, &gx, 40, &grid, 5, "mu").unwrap();
        let y = simulate_ensemble(&sys, &gy, 40, &grid, 5, "nu").unwrap();
        let mut direct = 0.0;
        for i in 0..40 {
            direct += x.state(0, i).iter().zip(y.state(0, i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        assert_eq!(mean_square_gap(&x, &y).unwrap()[0], direct / 40.0);
    }

    #[test]
    fn stationary_gap_is_twice_trace() {
        // Stationary covariance of A = diag(1,2), σ = 0.5 is diag(0.125, 0.0625).
        let sys = ou_2d();
        let grid = TimeGrid::new(8.0, 2e-3, &[8.0]).unwrap();
        let p = InitialSampler::Point { x0: vec![0.0, 0.0] };
        let x = simulate_ensemble(&sys, &p, 4000, &grid, 3, "mu").unwrap();
        let y = simulate_ensemble(&sys, &p, 4000, &grid, 3, "nu").unwrap();
        let gaps = pair_gaps(&x, &y, 0);
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (gaps.len() - 1) as f64;
        let se = (var / gaps.len() as f64).sqrt();
        let want = 2.0 * (0.125 + 0.0625);
        assert!((mean - want).abs() < 4.0 * se + 2e-3, "{mean} vs {want} (se {se})");
    }

    #[test]
    fn common_init_stream_couples_initial_states() {
        let sys = ou_2d();
        let grid = TimeGrid::new(0.1, 0.01, &[0.0]).unwrap();
        let cov = vec![vec![0.1, 0.0], vec![0.0, 0.1]];
        let gx = InitialSampler::Gaussian { mean: vec![1.0, 0.0], cov: cov.clone() };
        let gy = InitialSampler::Gaussian { mean: vec![0.0, 0.0], cov };
        let x = simulate_ensemble_with_init(&sys, &gx, 30, &grid, 4, "mu", "init").unwrap();
        let y = simulate_ensemble_with_init(&sys, &gy, 30, &grid, 4, "nu", "init").unwrap();
        for i in 0..30 {
            assert!((x.state(0, i)[0] - y.state(0, i)[0] - 1.0).abs() < 1e-15);
            assert_eq!(x.state(0, i)[1], y.state(0, i)[1]);
        }
    }

    #[test]
    fn binary_and_csv_export() {
        let sys = ou_2d();
        let grid = TimeGrid::new(0.2, 0.01, &[0.0, 0.2]).unwrap();
        let ens = simulate_ensemble(&sys, &InitialSampler::Point { x0: vec![1.0, 1.0] }, 4, &grid, 8, "mu").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.bin");
        ens.write_binary(&path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 8 * 2 * 4 * 2);
        assert_eq!(Ensemble::read_binary(&path).unwrap(), ens);

        let mut buf = Vec::new();
        ens.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,traj,x1,x2");
        assert_eq!(lines.len(), 1 + 2 * 4);
        assert!(lines[1].starts_with("0,0,1,1"));
    }

    #[test]
    fn invalid_sampler_rejected() {
        let sys = ou_2d();
        let grid = TimeGrid::new(0.1, 0.01, &[0.0]).unwrap();
        let bad = InitialSampler::Gaussian { mean: vec![0.0, 0.0], cov: vec![vec![1.0, 0.0], vec![0.0, -1.0]] };
        assert!(matches!(simulate_ensemble(&sys, &bad, 5, &grid, 0, "mu"), Err(SimulationError::InvalidSampler(_))));
        let wrong_dim = InitialSampler::Point { x0: vec![0.0] };
        assert!(simulate_ensemble(&sys, &wrong_dim, 5, &grid, 0, "mu").is_err());
    }
}
