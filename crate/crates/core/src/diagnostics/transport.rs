use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::default_ridge;
use crate::error::{Error, Result};
use crate::linalg::{sample_moments, sym_sqrt, symmetrize};
use crate::linear_gaussian::GaussianMoments;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    GaussianClosedForm,
    Sinkhorn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportDistance {
    pub value: f64,
    pub kind: TransportKind,
    pub epsilon: Option<f64>,
    pub whitened: bool,
    pub converged: bool,
    pub iterations: usize,
}

/// Closed-form 2-Wasserstein distance between two Gaussians.
pub fn gaussian_w2(a: &GaussianMoments, b: &GaussianMoments) -> Result<TransportDistance> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let finite = |m: &GaussianMoments| m.mean.iter().chain(m.cov.iter()).all(|v| v.is_finite());
    if !finite(a) || !finite(b) {
        return Err(Error::Numerical("Gaussian moments contain non-finite entries".into()));
    }
    let ra = sym_sqrt(&a.cov);
    let cross = sym_sqrt(&symmetrize(&(&ra * &b.cov * &ra)));
    let bures = a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
    let d2 = (&a.mean - &b.mean).norm_squared() + bures.max(0.0);
    Ok(TransportDistance {
        value: d2.sqrt(),
        kind: TransportKind::GaussianClosedForm,
        epsilon: None,
        whitened: false,
        converged: true,
        iterations: 0,
    })
}

/// Affine map `x ↦ L⁻¹(x − m)` with `L Lᵀ = C + ridge·I`.
#[derive(Clone, Debug)]
pub struct Whitening {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl Whitening {
    pub fn new(mean: &DVector<f64>, cov: &DMatrix<f64>, ridge: f64) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                got: cov.nrows(),
            });
        }
        let reg = symmetrize(cov) + DMatrix::identity(d, d) * ridge;
        let chol = reg
            .cholesky()
            .ok_or_else(|| Error::Numerical("covariance is singular after ridge".into()))?;
        Ok(Self {
            mean: mean.clone(),
            factor: chol.l(),
        })
    }

    /// Whitening by the empirical moments of `reference` with the default ridge.
    pub fn from_samples(reference: &DMatrix<f64>) -> Result<Self> {
        let (m, c) = sample_moments(reference);
        Self::new(&m, &c, default_ridge(&c))
    }

    pub fn apply(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        let centered = DMatrix::from_fn(points.nrows(), points.ncols(), |i, j| points[(i, j)] - self.mean[j]);
        // Rows are points: solve L Xᵀ = centeredᵀ.
        let t = self
            .factor
            .solve_lower_triangular(&centered.transpose())
            .expect("factor has a positive diagonal");
        t.transpose()
    }

    pub fn invert(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        let x = (&self.factor * points.transpose()).transpose();
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] + self.mean[j])
    }
}

pub fn whiten(points: &DMatrix<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    Ok(Whitening::new(mean, cov, ridge)?.apply(points))
}

pub fn unwhiten(points: &DMatrix<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    Ok(Whitening::new(mean, cov, ridge)?.invert(points))
}

/// Five percent of the mean squared distance between distinct points.
pub fn default_epsilon(reference: &DMatrix<f64>) -> f64 {
    if reference.nrows() < 2 {
        return 1.0;
    }
    let (_, c) = sample_moments(reference);
    0.05 * 2.0 * c.trace()
}

/// `n` rows drawn without replacement (all rows if there are fewer).
pub fn subsample(samples: &DMatrix<f64>, n: usize, seed: u64) -> DMatrix<f64> {
    if samples.nrows() <= n {
        return samples.clone();
    }
    let mut r = crate::rng::rng(seed);
    let mut idx = rand::seq::index::sample(&mut r, samples.nrows(), n).into_vec();
    idx.sort_unstable();
    DMatrix::from_fn(n, samples.ncols(), |i, j| samples[(idx[i], j)])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornOptions {
    /// Entropic regularization; `None` uses [`default_epsilon`] of `a`
    /// (after whitening, if enabled).
    pub epsilon: Option<f64>,
    pub max_iter: usize,
    /// Tolerance on the L1 violation of the column marginal.
    pub tol: f64,
    /// Whiten both sets by the empirical moments of `a` first.
    pub whiten: bool,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            epsilon: None,
            max_iter: 5000,
            tol: 1e-6,
            whiten: true,
        }
    }
}

fn lse(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Entropic optimal transport between the empirical measures of the rows of
/// `a` and `b` with squared-Euclidean cost, solved by log-domain Sinkhorn.
/// Returns the square root of the transport cost `⟨P, C⟩` of the entropic
/// plan.
pub fn sinkhorn_w2(a: &DMatrix<f64>, b: &DMatrix<f64>, opts: &SinkhornOptions) -> Result<TransportDistance> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::input("Sinkhorn needs nonempty sample sets"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    let (x, y) = if opts.whiten {
        let w = Whitening::from_samples(a)?;
        (w.apply(a), w.apply(b))
    } else {
        (a.clone(), b.clone())
    };
    let eps = opts.epsilon.unwrap_or_else(|| default_epsilon(&x));
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::input(format!("epsilon must be positive, got {eps}")));
    }
    let (n, m) = (x.nrows(), y.nrows());
    let cost = DMatrix::from_fn(n, m, |i, j| (x.row(i) - y.row(j)).norm_squared());
    let cost_t = cost.transpose();
    let (la, lb) = (-(n as f64).ln(), -(m as f64).ln());
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut buf = vec![0.0; n.max(m)];
    // ε-scaling: anneal from the cost scale down to the target, warm-starting
    // the potentials; only the final level is run to convergence.
    let mut level = cost.max().max(eps);
    let (mut converged, mut iterations) = (false, 0usize);
    loop {
        let last = level <= eps;
        let e = if last { eps } else { level };
        let budget = if last { opts.max_iter } else { 10 };
        for k in 0..budget {
            iterations += 1;
            for j in 0..m {
                let col = cost.column(j);
                for i in 0..n {
                    buf[i] = la + (f[i] - col[i]) / e;
                }
                g[j] = -e * lse(buf[..n].iter().copied());
            }
            for i in 0..n {
                let row = cost_t.column(i);
                for j in 0..m {
                    buf[j] = lb + (g[j] - row[j]) / e;
                }
                f[i] = -e * lse(buf[..m].iter().copied());
            }
            if last && (k % 5 == 4 || k + 1 == budget) {
                let violation: f64 = (0..m)
                    .map(|j| {
                        let col = cost.column(j);
                        let s: f64 = (0..n).map(|i| (la + lb + (f[i] + g[j] - col[i]) / e).exp()).sum();
                        (s - 1.0 / m as f64).abs()
                    })
                    .sum();
                if violation < opts.tol {
                    converged = true;
                    break;
                }
            }
        }
        if last {
            break;
        }
        level = (level * 0.5).max(eps);
    }
    let mut total = 0.0;
    for j in 0..m {
        let col = cost.column(j);
        for i in 0..n {
            total += (la + lb + (f[i] + g[j] - col[i]) / eps).exp() * col[i];
        }
    }
    Ok(TransportDistance {
        value: total.max(0.0).sqrt(),
        kind: TransportKind::Sinkhorn,
        epsilon: Some(eps),
        whitened: opts.whiten,
        converged,
        iterations,
    })
}
