//! 2-Wasserstein distances: exact between equal-size empirical measures
//! (permutation brute force and linear assignment), entropic (Sinkhorn) upper
//! bounds, and the closed form between Gaussians.

mod assignment;
mod gaussian;
mod sinkhorn;

pub use assignment::{solve_assignment, w2_assignment, w2_assignment_distance};
pub use gaussian::{w2_gaussian, GaussianLaw};
pub use sinkhorn::{w2_sinkhorn, SinkhornOptions};

use rayon::prelude::*;
use thiserror::Error;

use crate::numerics::NumericsError;

/// Largest cloud size accepted by [`w2_bruteforce`].
pub const BRUTEFORCE_MAX_N: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("point clouds must have equal size and dimension (got {n_x}x{d_x} and {n_y}x{d_y})")]
    ShapeMismatch { n_x: usize, d_x: usize, n_y: usize, d_y: usize },
    #[error("brute force refused for n = {0} > {BRUTEFORCE_MAX_N}")]
    TooLarge(usize),
    #[error("point cloud is empty or has non-finite coordinates")]
    InvalidCloud,
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("sinkhorn did not reach marginal tolerance {tol:e} in {iterations} iterations (violation {violation:e})")]
    NotConverged { iterations: usize, violation: f64, tol: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Uniform empirical measure on `n` points of ℝ^d, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    n: usize,
    dim: usize,
    points: Vec<f64>,
}

impl PointCloud {
    pub fn new(n: usize, dim: usize, points: Vec<f64>) -> Result<Self, TransportError> {
        if n == 0 || dim == 0 || points.len() != n * dim || points.iter().any(|v| !v.is_finite()) {
            return Err(TransportError::InvalidCloud);
        }
        Ok(Self { n, dim, points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TransportError> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(TransportError::InvalidCloud);
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }

    /// Apply `x ↦ scale·x + shift` to every point.
    pub fn affine(&self, scale: f64, shift: &[f64]) -> Self {
        let points = self.points.iter().enumerate().map(|(k, v)| scale * v + shift[k % self.dim]).collect();
        Self { n: self.n, dim: self.dim, points }
    }

    /// Contiguous sub-cloud of points `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self { n: end - start, dim: self.dim, points: self.points[start * self.dim..end * self.dim].to_vec() }
    }
}

fn check_pair(x: &PointCloud, y: &PointCloud) -> Result<(), TransportError> {
    if x.n != y.n || x.dim != y.dim {
        return Err(TransportError::ShapeMismatch { n_x: x.n, d_x: x.dim, n_y: y.n, d_y: y.dim });
    }
    Ok(())
}

/// Dense `n × n` squared-Euclidean cost, row-major.
pub fn squared_cost_matrix(x: &PointCloud, y: &PointCloud) -> Vec<f64> {
    let n = x.n;
    let mut cost = vec![0.0; n * n];
    cost.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let xi = x.point(i);
        for (j, c) in row.iter_mut().enumerate() {
            *c = xi.iter().zip(y.point(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    });
    cost
}

/// Coupling between two uniform `n`-point measures.
#[derive(Debug, Clone, PartialEq)]
pub enum TransportPlan {
    /// `plan[i][perm[i]] = 1/n`.
    Permutation(Vec<usize>),
    /// Row-major `n × n` masses.
    Dense { n: usize, mass: Vec<f64> },
}

impl TransportPlan {
    pub fn n(&self) -> usize {
        match self {
            Self::Permutation(p) => p.len(),
            Self::Dense { n, .. } => *n,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Self::Permutation(p) => {
                if p[i] == j {
                    1.0 / p.len() as f64
                } else {
                    0.0
                }
            }
            Self::Dense { n, mass } => mass[i * n + j],
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n();
        (0..n * n).map(|k| self.get(k / n, k % n)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|i| (0..n).map(|j| self.get(i, j)).sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|j| (0..n).map(|i| self.get(i, j)).sum()).collect()
    }

    /// `Σ_ij plan_ij · cost_ij` for a row-major cost matrix.
    pub fn cost(&self, cost: &[f64]) -> f64 {
        match self {
            Self::Permutation(p) => {
                let n = p.len();
                p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64
            }
            Self::Dense { mass, .. } => mass.iter().zip(cost).map(|(m, c)| m * c).sum(),
        }
    }

    /// Largest deviation of any row or column sum from `1/n`.
    pub fn marginal_violation(&self) -> f64 {
        let target = 1.0 / self.n() as f64;
        self.row_sums().into_iter().chain(self.col_sums()).map(|s| (s - target).abs()).fold(0.0, f64::max)
    }
}

/// Exact discrete W2 by enumerating all `n!` matchings (`n ≤ 8`).
pub fn w2_bruteforce(x: &PointCloud, y: &PointCloud) -> Result<f64, TransportError> {
    check_pair(x, y)?;
    if x.n > BRUTEFORCE_MAX_N {
        return Err(TransportError::TooLarge(x.n));
    }
    let n = x.n;
    let cost = squared_cost_matrix(x, y);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        best = best.min(c);
    });
    Ok((best / n as f64).sqrt())
}

fn permute(p: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bruteforce_examples() {
        let a = PointCloud::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let b = PointCloud::from_rows(&[vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(w2_bruteforce(&a, &a).unwrap(), 0.0);
        assert!((w2_bruteforce(&a, &b).unwrap() - 2.0).abs() < 1e-15);

        let x = PointCloud::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let y = PointCloud::from_rows(&[vec![4.0, 6.0]]).unwrap();
        assert_eq!(w2_bruteforce(&x, &y).unwrap(), 5.0);
    }

    #[test]
    fn bruteforce_refuses_large_and_mismatched() {
        let big = PointCloud::new(9, 1, (0..9).map(f64::from).collect()).unwrap();
        assert_eq!(w2_bruteforce(&big, &big).unwrap_err(), TransportError::TooLarge(9));
        let a = PointCloud::new(2, 1, vec![0.0, 1.0]).unwrap();
        let b = PointCloud::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        assert!(matches!(w2_bruteforce(&a, &b), Err(TransportError::ShapeMismatch { .. })));
    }

    #[test]
    fn invalid_clouds_rejected() {
        assert_eq!(PointCloud::new(1, 1, vec![f64::NAN]).unwrap_err(), TransportError::InvalidCloud);
        assert_eq!(PointCloud::new(2, 1, vec![0.0]).unwrap_err(), TransportError::InvalidCloud);
        assert_eq!(PointCloud::from_rows(&[]).unwrap_err(), TransportError::InvalidCloud);
    }

    #[test]
    fn permutation_plan_accessors() {
        let plan = TransportPlan::Permutation(vec![1, 0, 2]);
        assert_eq!(plan.get(0, 1), 1.0 / 3.0);
        assert_eq!(plan.get(0, 0), 0.0);
        assert!(plan.marginal_violation() < 1e-15);
        let dense = plan.to_dense();
        assert_eq!(dense.iter().filter(|&&v| v > 0.0).count(), 3);
    }
}
