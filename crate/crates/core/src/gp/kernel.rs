use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `v * exp(-0.5 * sum(((x - x') / l)^2))`
    SquaredExponential,
    /// `v * exp(-||(x - x') / l||)`
    Exponential,
}

/// Stationary covariance kernel with ARD lengthscales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    pub variance: f64,
    pub lengthscales: Vec<f64>,
}

impl Kernel {
    pub fn new(family: KernelFamily, variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::input(format!("kernel variance must be positive, got {variance}")));
        }
        if lengthscales.is_empty() {
            return Err(Error::input("kernel needs at least one lengthscale"));
        }
        if let Some(l) = lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::input(format!("lengthscales must be positive, got {l}")));
        }
        Ok(Self {
            family,
            variance,
            lengthscales,
        })
    }

    pub fn squared_exponential(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::SquaredExponential, variance, lengthscales)
    }

    pub fn exponential(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::Exponential, variance, lengthscales)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Covariance between two points, with a dimension check.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        for p in [x, y] {
            if p.len() != self.dim() {
                return Err(Error::Dimension {
                    expected: self.dim(),
                    got: p.len(),
                });
            }
        }
        Ok(self.k(x, y))
    }

    #[inline]
    pub(crate) fn k(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(y)
            .zip(&self.lengthscales)
            .map(|((a, b), l)| {
                let d = (a - b) / l;
                d * d
            })
            .sum();
        match self.family {
            KernelFamily::SquaredExponential => self.variance * (-0.5 * r2).exp(),
            KernelFamily::Exponential => self.variance * (-r2.sqrt()).exp(),
        }
    }

    /// Cross-covariance matrix `k(a_i, b_j)`.
    pub fn cross(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.k(&a[i], &b[j]))
    }

    /// Symmetric Gram matrix over a point set.
    pub fn gram(&self, a: &[Vec<f64>]) -> DMatrix<f64> {
        let n = a.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.variance;
            for j in 0..i {
                let v = self.k(&a[i], &a[j]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }
}

/// Rows of a matrix as owned point vectors.
pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}
