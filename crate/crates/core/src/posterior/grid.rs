use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{compensated_sum, log_sum_exp};

/// Tensor-product midpoint grid over a finite box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub bounds: Vec<(f64, f64)>,
    pub nodes: Vec<usize>,
}

impl Grid {
    pub fn midpoint(bounds: &[(f64, f64)], nodes: &[usize]) -> Result<Self> {
        if bounds.is_empty() || bounds.len() != nodes.len() {
            return Err(Error::input("grid needs one node count per bounded dimension"));
        }
        if bounds.len() > 3 {
            return Err(Error::input("grid densities are limited to three dimensions"));
        }
        for (&(lo, hi), &n) in bounds.iter().zip(nodes) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::input(format!("grid needs a finite box, got [{lo}, {hi}]")));
            }
            if n == 0 {
                return Err(Error::input("grid needs at least one node per dimension"));
            }
        }
        Ok(Self {
            bounds: bounds.to_vec(),
            nodes: nodes.to_vec(),
        })
    }

    /// Default resolution: 200 nodes per dimension up to D = 2, 60 for D = 3.
    pub fn default_for(bounds: &[(f64, f64)]) -> Result<Self> {
        let n = if bounds.len() <= 2 { 200 } else { 60 };
        Self::midpoint(bounds, &vec![n; bounds.len()])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self, j: usize) -> f64 {
        let (lo, hi) = self.bounds[j];
        (hi - lo) / self.nodes[j] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|j| self.width(j)).product()
    }

    /// Midpoint coordinate `k` along dimension `j`.
    pub fn node(&self, j: usize, k: usize) -> f64 {
        self.bounds[j].0 + (k as f64 + 0.5) * self.width(j)
    }

    /// Per-dimension node indices of flat index `i` (last dimension fastest).
    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for j in (0..self.dim()).rev() {
            idx[j] = i % self.nodes[j];
            i /= self.nodes[j];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.nodes).fold(0, |acc, (k, n)| acc * n + k)
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.multi_index(i)
            .iter()
            .enumerate()
            .map(|(j, &k)| self.node(j, k))
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Flat index of the cell containing `u`, if inside the box.
    pub fn locate(&self, u: &[f64]) -> Option<usize> {
        if u.len() != self.dim() {
            return None;
        }
        let mut idx = Vec::with_capacity(self.dim());
        for (j, &x) in u.iter().enumerate() {
            let (lo, hi) = self.bounds[j];
            if !(x >= lo && x <= hi) {
                return None;
            }
            let k = ((x - lo) / self.width(j)).floor() as usize;
            idx.push(k.min(self.nodes[j] - 1));
        }
        Some(self.flat_index(&idx))
    }
}

/// Normalized density on a grid. `values` are density values (not masses);
/// the quadrature sum of `values · cell_volume` is 1.
#[derive(Clone, Debug)]
pub struct GridDensity {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
    /// `log Z` of the unnormalized input, relative to whatever offset the
    /// caller's log-values carried.
    pub log_norm: f64,
    pub label: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GridDensityMeta {
    pub label: String,
    pub grid: Grid,
    pub log_normalizer: f64,
    pub quadrature_mass: f64,
}

impl GridDensity {
    /// Normalize `exp(log_values)` by quadrature, in log space.
    pub fn from_log_values(grid: Arc<Grid>, log_values: &[f64], label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if log_values.len() != grid.len() {
            return Err(Error::Dimension {
                expected: grid.len(),
                got: log_values.len(),
            });
        }
        if log_values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Numerical(format!("{label}: log-density has NaN or +inf values")));
        }
        let lse = log_sum_exp(log_values);
        if !lse.is_finite() {
            return Err(Error::DegenerateDensity(format!("{label}: zero mass on the grid")));
        }
        let log_norm = lse + grid.cell_volume().ln();
        let values = log_values.iter().map(|v| (v - log_norm).exp()).collect();
        Ok(Self {
            grid,
            values,
            log_norm,
            label,
        })
    }

    /// Normalize nonnegative density values.
    pub fn from_values(grid: Arc<Grid>, values: &[f64], label: impl Into<String>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::input(format!("density values must be nonnegative, got {v}")));
        }
        let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        Self::from_log_values(grid, &logs, label)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn masses(&self) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        self.values.iter().map(|v| v * vol).collect()
    }

    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.masses())
    }

    pub fn mean(&self) -> DVector<f64> {
        let d = self.grid.dim();
        let masses = self.masses();
        DVector::from_fn(d, |j, _| {
            compensated_sum((0..self.grid.len()).map(|i| masses[i] * self.grid.point(i)[j]))
        })
    }

    pub fn cov(&self) -> DMatrix<f64> {
        let d = self.grid.dim();
        let m = self.mean();
        let masses = self.masses();
        let mut c = DMatrix::zeros(d, d);
        for (i, w) in masses.iter().enumerate() {
            let p = DVector::from_vec(self.grid.point(i)) - &m;
            c += &p * p.transpose() * *w;
        }
        c
    }

    pub fn same_grid(&self, other: &GridDensity) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    /// CSV with columns `u1..uD,density`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header: Vec<String> = (1..=self.grid.dim()).map(|j| format!("u{j}")).collect();
        header.push("density".into());
        w.write_record(&header).map_err(|e| Error::Serde(e.to_string()))?;
        for i in 0..self.grid.len() {
            let mut rec: Vec<String> = self.grid.point(i).iter().map(|x| format!("{x}")).collect();
            rec.push(format!("{}", self.values[i]));
            w.write_record(&rec).map_err(|e| Error::Serde(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn metadata(&self) -> GridDensityMeta {
        GridDensityMeta {
            label: self.label.clone(),
            grid: (*self.grid).clone(),
            log_normalizer: self.log_norm,
            quadrature_mass: self.total_mass(),
        }
    }

    pub fn write_metadata(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(serde_json::to_string_pretty(&self.metadata())?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let g = Grid::midpoint(&[(0.0, 1.0), (-1.0, 1.0), (2.0, 3.0)], &[3, 4, 5]).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(i)), i);
            assert_eq!(g.locate(&g.point(i)), Some(i));
        }
    }

    #[test]
    fn normalizes_in_log_space() {
        let g = Arc::new(Grid::midpoint(&[(0.0, 2.0)], &[50]).unwrap());
        let logs: Vec<f64> = g.points().iter().map(|p| 1000.0 - p[0]).collect();
        let d = GridDensity::from_log_values(g, &logs, "t").unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_is_degenerate() {
        let g = Arc::new(Grid::midpoint(&[(0.0, 1.0)], &[5]).unwrap());
        let r = GridDensity::from_values(g, &[0.0; 5], "z");
        assert!(matches!(r, Err(Error::DegenerateDensity(_))));
    }

    #[test]
    fn uniform_moments() {
        let g = Arc::new(Grid::midpoint(&[(0.0, 1.0)], &[1000]).unwrap());
        let d = GridDensity::from_values(g, &[1.0; 1000], "u").unwrap();
        assert!((d.mean()[0] - 0.5).abs() < 1e-12);
        assert!((d.cov()[(0, 0)] - 1.0 / 12.0).abs() < 1e-6);
    }
}
