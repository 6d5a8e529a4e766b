use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::default_ridge;
use super::transport::Whitening;
use crate::error::{Error, Result};
use crate::linalg::sample_moments;
use crate::posterior::GridDensity;
use crate::stats::quantile_sorted;

/// Nominal levels 0.05, 0.10, ..., 0.95.
pub fn default_levels() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    pub method: String,
    pub levels: Vec<f64>,
    pub coverage: Vec<f64>,
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty()
        || levels.iter().any(|p| !(0.0..=1.0).contains(p))
        || levels.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::input("coverage levels must be strictly increasing within [0, 1]"));
    }
    Ok(())
}

/// Joint ellipsoidal coverage: for each level `p` the region is the set of
/// points whose squared Mahalanobis distance (under the approximation's
/// sample moments) is at most the empirical `p`-quantile of the
/// approximation's own squared distances. Coverage is the fraction of
/// reference samples inside.
pub fn ellipsoidal_coverage(
    reference: &DMatrix<f64>,
    approx: &DMatrix<f64>,
    levels: &[f64],
    method: &str,
) -> Result<CoverageCurve> {
    check_levels(levels)?;
    if reference.nrows() < 2 || approx.nrows() < 2 {
        return Err(Error::input("coverage needs at least two samples per set"));
    }
    if reference.ncols() != approx.ncols() {
        return Err(Error::Dimension {
            expected: approx.ncols(),
            got: reference.ncols(),
        });
    }
    let (m, c) = sample_moments(approx);
    let w = Whitening::new(&m, &c, default_ridge(&c))?;
    let sq = |x: &DMatrix<f64>| -> Vec<f64> { w.apply(x).row_iter().map(|r| r.norm_squared()).collect() };
    let mut own = sq(approx);
    own.sort_by(|a, b| a.total_cmp(b));
    let mut refd = sq(reference);
    refd.sort_by(|a, b| a.total_cmp(b));
    let n = refd.len() as f64;
    let coverage = levels
        .iter()
        .map(|&p| {
            let r2 = quantile_sorted(&own, p);
            refd.partition_point(|&d| d <= r2) as f64 / n
        })
        .collect();
    Ok(CoverageCurve {
        method: method.to_string(),
        levels: levels.to_vec(),
        coverage,
    })
}

/// Grid coverage: for each level `p` the approximation's highest-density
/// mask is grown cell by cell (descending density) until its mass reaches
/// `p`; coverage is the reference mass inside the mask.
pub fn grid_coverage(reference: &GridDensity, approx: &GridDensity, levels: &[f64], method: &str) -> Result<CoverageCurve> {
    check_levels(levels)?;
    if !reference.same_grid(approx) {
        return Err(Error::input("coverage densities live on different grids"));
    }
    let am = approx.masses();
    let rm = reference.masses();
    let total: f64 = am.iter().sum();
    let mut order: Vec<usize> = (0..am.len()).collect();
    order.sort_by(|&i, &j| am[j].total_cmp(&am[i]).then(i.cmp(&j)));
    let mut coverage = Vec::with_capacity(levels.len());
    let (mut k, mut mass, mut covered) = (0usize, 0.0, 0.0);
    for &p in levels {
        while k < order.len() && mass < p * total * (1.0 - 1e-12) {
            mass += am[order[k]];
            covered += rm[order[k]];
            k += 1;
        }
        coverage.push(covered.clamp(0.0, 1.0));
    }
    Ok(CoverageCurve {
        method: method.to_string(),
        levels: levels.to_vec(),
        coverage,
    })
}
