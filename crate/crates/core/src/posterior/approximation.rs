use nalgebra::{DMatrix, DVector};

use super::grid::GridDensity;
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, sample_moments};
use crate::linear_gaussian::GaussianMoments;

/// Common representation for comparing posterior approximations.
#[derive(Clone, Debug)]
pub enum Approximation {
    Grid(GridDensity),
    Gaussian(GaussianMoments),
    /// One sample per row.
    Samples(DMatrix<f64>),
}

#[derive(Clone, Debug)]
pub struct PosteriorApproximation {
    pub label: String,
    pub payload: Approximation,
}

impl PosteriorApproximation {
    pub fn grid(density: GridDensity, label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            payload: Approximation::Grid(density),
        }
    }

    pub fn gaussian(moments: GaussianMoments, label: impl Into<String>) -> Result<Self> {
        if min_eigenvalue(&moments.cov) <= 0.0 {
            return Err(Error::input("Gaussian approximation needs an SPD covariance"));
        }
        Ok(Self {
            label: label.into(),
            payload: Approximation::Gaussian(moments),
        })
    }

    pub fn samples(samples: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::input("sample approximation needs at least one sample"));
        }
        Ok(Self {
            label: label.into(),
            payload: Approximation::Samples(samples),
        })
    }

    pub fn dim(&self) -> usize {
        match &self.payload {
            Approximation::Grid(d) => d.grid.dim(),
            Approximation::Gaussian(m) => m.dim(),
            Approximation::Samples(s) => s.ncols(),
        }
    }

    /// Mean and covariance (the Gaussian fit used by moment-based metrics).
    pub fn moments(&self) -> GaussianMoments {
        let (mean, cov): (DVector<f64>, DMatrix<f64>) = match &self.payload {
            Approximation::Grid(d) => (d.mean(), d.cov()),
            Approximation::Gaussian(m) => (m.mean.clone(), m.cov.clone()),
            Approximation::Samples(s) => sample_moments(s),
        };
        GaussianMoments { mean, cov }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_singular() {
        assert!(PosteriorApproximation::samples(DMatrix::zeros(0, 2), "s").is_err());
        let m = GaussianMoments {
            mean: DVector::zeros(2),
            cov: DMatrix::zeros(2, 2),
        };
        assert!(PosteriorApproximation::gaussian(m, "g").is_err());
    }
}
