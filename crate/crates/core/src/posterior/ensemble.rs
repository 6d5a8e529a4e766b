use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::grid::Grid;
use super::problem::InverseProblem;
use crate::error::{Error, Result};
use crate::gp::{BoundFn, GaussianEmulator, RffSampler};
use crate::linalg::{cholesky_jitter, log_sum_exp};
use crate::rng::{self, derive_seed};

/// Finite sample of surrogate trajectories, stored as the M×G matrix of
/// log unnormalized densities `log π(u_g; f_m)` on a grid.
#[derive(Clone, Debug)]
pub struct EmulatorEnsemble {
    grid: Arc<Grid>,
    log_values: DMatrix<f64>,
    seeds: Vec<u64>,
}

/// How GP trajectories are drawn on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TrajectoryMethod {
    /// Exact joint draw of all grid values (Cholesky of the G×G predictive
    /// covariance); practical up to a few thousand grid points.
    JointGrid,
    /// Random-Fourier-feature pathwise samples (squared-exponential only).
    Rff { n_features: usize },
}

impl EmulatorEnsemble {
    pub fn from_log_values(grid: Arc<Grid>, log_values: DMatrix<f64>, seeds: Vec<u64>) -> Result<Self> {
        if log_values.nrows() == 0 {
            return Err(Error::input("ensemble needs at least one trajectory"));
        }
        if log_values.ncols() != grid.len() {
            return Err(Error::Dimension {
                expected: grid.len(),
                got: log_values.ncols(),
            });
        }
        if seeds.len() != log_values.nrows() {
            return Err(Error::input("one seed per trajectory required"));
        }
        if log_values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Numerical("ensemble log-densities contain NaN or +inf".into()));
        }
        Ok(Self {
            grid,
            log_values,
            seeds,
        })
    }

    /// Evaluate `eval(m, u)` (trajectory `m`'s target value at `u`) on every
    /// grid point and convert to log unnormalized densities.
    pub fn from_trajectories<F>(problem: &InverseProblem, grid: Arc<Grid>, seeds: Vec<u64>, eval: F) -> Result<Self>
    where
        F: Fn(usize, &[f64]) -> Vec<f64>,
    {
        let points = grid.points();
        let m = seeds.len();
        let mut lv = DMatrix::zeros(m, points.len());
        for i in 0..m {
            for (g, u) in points.iter().enumerate() {
                lv[(i, g)] = problem.log_unnorm_density(u, &eval(i, u));
            }
        }
        Self::from_log_values(grid, lv, seeds)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn n_members(&self) -> usize {
        self.log_values.nrows()
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn log_values(&self) -> &DMatrix<f64> {
        &self.log_values
    }

    /// Per-trajectory `log Z(f_m)` by quadrature; `-∞` for null trajectories.
    pub fn log_normalizers(&self) -> Vec<f64> {
        let lv = self.grid.cell_volume().ln();
        (0..self.n_members())
            .map(|i| {
                let row: Vec<f64> = self.log_values.row(i).iter().copied().collect();
                log_sum_exp(&row) + lv
            })
            .collect()
    }

    /// Same ensemble with every log-density shifted by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            log_values: self.log_values.add_scalar(c),
            seeds: self.seeds.clone(),
        }
    }

    /// Restrict to a subset of trajectories.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let lv = DMatrix::from_fn(rows.len(), self.grid.len(), |i, g| self.log_values[(rows[i], g)]);
        Self::from_log_values(self.grid.clone(), lv, rows.iter().map(|&i| self.seeds[i]).collect())
    }
}

/// Draw `m` trajectories of an independent-output GP surrogate on `grid`.
/// For log-density roles pass one output; `clip` caps each drawn value at
/// `b(u)` before the density is formed.
pub fn sample_gp_ensemble(
    problem: &InverseProblem,
    outputs: &[GaussianEmulator],
    grid: Arc<Grid>,
    m: usize,
    seed: u64,
    method: TrajectoryMethod,
    clip: Option<&BoundFn>,
) -> Result<EmulatorEnsemble> {
    if m == 0 {
        return Err(Error::input("ensemble size must be positive"));
    }
    if outputs.len() != problem.target_dim() {
        return Err(Error::Dimension {
            expected: problem.target_dim(),
            got: outputs.len(),
        });
    }
    let points = grid.points();
    let g = points.len();
    let seeds: Vec<u64> = (0..m as u64).map(|i| derive_seed(seed, &[i])).collect();
    // values[k] is the m×G matrix of draws for output k.
    let mut values = Vec::with_capacity(outputs.len());
    for (k, em) in outputs.iter().enumerate() {
        let mut draws = DMatrix::zeros(m, g);
        match method {
            TrajectoryMethod::JointGrid => {
                let (mean, cov) = em.predict_joint(&points);
                let l = cholesky_jitter(&cov, em.kernel().variance)?.l();
                for (i, s) in seeds.iter().enumerate() {
                    let mut r = rng::child_rng(*s, &[k as u64]);
                    let z = rng::std_normal_vec(&mut r, g);
                    let f: DVector<f64> = &mean + &l * z;
                    draws.row_mut(i).copy_from(&f.transpose());
                }
            }
            TrajectoryMethod::Rff { n_features } => {
                let sampler = RffSampler::new(em.kernel(), n_features, derive_seed(seed, &[u64::MAX, k as u64]))?;
                for (i, s) in seeds.iter().enumerate() {
                    let t = sampler.trajectory(em, derive_seed(*s, &[k as u64]))?;
                    for (j, u) in points.iter().enumerate() {
                        draws[(i, j)] = t.eval(u);
                    }
                }
            }
        }
        if let Some(b) = clip {
            for (j, u) in points.iter().enumerate() {
                let bj = b(u);
                for i in 0..m {
                    draws[(i, j)] = draws[(i, j)].min(bj);
                }
            }
        }
        values.push(draws);
    }
    let mut lv = DMatrix::zeros(m, g);
    let mut f = vec![0.0; outputs.len()];
    for i in 0..m {
        for (j, u) in points.iter().enumerate() {
            for (k, v) in values.iter().enumerate() {
                f[k] = v[(i, j)];
            }
            lv[(i, j)] = problem.log_unnorm_density(u, &f);
        }
    }
    EmulatorEnsemble::from_log_values(grid, lv, seeds)
}
