use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::InverseProblem;
use crate::rng::{self, std_normal_vec};
use crate::stats::{norm_quantile, LN_2PI};

/// Solve `(κ v')' = -s` on a uniform grid over `[0, 1]` with `v(1) = v_right`
/// and `κ(0) v'(0) = flux_left`. Face conductivities are harmonic means of
/// the adjacent nodal values; the flux condition closes a half cell at
/// `x = 0`.
pub fn pde_solve_bvp(kappa: &[f64], source: &[f64], flux_left: f64, v_right: f64) -> Result<Vec<f64>> {
    let n = kappa.len();
    if n < 2 {
        return Err(Error::input("PDE grid needs at least two nodes"));
    }
    if source.len() != n {
        return Err(Error::Dimension { expected: n, got: source.len() });
    }
    if let Some(k) = kappa.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
        return Err(Error::input(format!("conductivity must be positive and finite, got {k}")));
    }
    let h = 1.0 / (n - 1) as f64;
    let face: Vec<f64> = (0..n - 1)
        .map(|i| 2.0 * kappa[i] * kappa[i + 1] / (kappa[i] + kappa[i + 1]))
        .collect();
    // Unknowns v_0..v_{n-2}; v_{n-1} = v_right.
    let m = n - 1;
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    // Half cell [0, h/2]: κ_{1/2}(v_1 - v_0)/h - flux_left = -s_0 h/2.
    diag[0] = -face[0] / h;
    if m > 1 {
        upper[0] = face[0] / h;
    } else {
        rhs[0] -= face[0] / h * v_right;
    }
    rhs[0] += flux_left - source[0] * h / 2.0;
    for i in 1..m {
        lower[i] = face[i - 1] / h;
        diag[i] = -(face[i - 1] + face[i]) / h;
        rhs[i] = -source[i] * h;
        if i + 1 < m {
            upper[i] = face[i] / h;
        } else {
            rhs[i] -= face[i] / h * v_right;
        }
    }
    let mut v = thomas(&lower, &diag, &upper, &rhs)?;
    v.push(v_right);
    Ok(v)
}

/// Tridiagonal solve; `lower[0]` and `upper[n-1]` are ignored.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom.abs() < 1e-300 {
        return Err(Error::Numerical("singular tridiagonal system".into()));
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom.abs() < 1e-300 || !denom.is_finite() {
            return Err(Error::Numerical("singular tridiagonal system".into()));
        }
        c[i] = upper[i] / denom;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdeSpec {
    pub n_grid: usize,
    /// Observation sites are the grid points nearest these locations.
    pub obs_locations: Vec<f64>,
    pub sigma: f64,
    pub source_delta: f64,
    pub source_centers: Vec<f64>,
    pub source_amplitude: f64,
    pub prior_mean: f64,
    pub kernel_variance: f64,
    pub kernel_lengthscale: f64,
    pub kl_rank: usize,
    /// Prior support is truncated to `[-α, α]^R` with `α = Φ⁻¹(trunc_quantile)`.
    pub trunc_quantile: f64,
}

impl Default for PdeSpec {
    fn default() -> Self {
        Self {
            n_grid: 100,
            obs_locations: vec![0.2, 0.4, 0.6, 0.8],
            sigma: 0.001,
            source_delta: 0.05,
            source_centers: vec![0.2, 0.4, 0.6, 0.8],
            source_amplitude: 0.8,
            prior_mean: 1.0,
            kernel_variance: 1.0,
            kernel_lengthscale: 1.0,
            kl_rank: 6,
            trunc_quantile: 0.999,
        }
    }
}

impl PdeSpec {
    pub fn grid(&self) -> Vec<f64> {
        let h = 1.0 / (self.n_grid - 1) as f64;
        (0..self.n_grid).map(|i| i as f64 * h).collect()
    }

    pub fn source(&self, x: &[f64]) -> Vec<f64> {
        let d = self.source_delta;
        let norm = self.source_amplitude / (d * (2.0 * std::f64::consts::PI).sqrt());
        x.iter()
            .map(|&xi| {
                self.source_centers
                    .iter()
                    .map(|c| norm * (-0.5 * (xi - c).powi(2) / (d * d)).exp())
                    .sum()
            })
            .collect()
    }

    pub fn obs_indices(&self) -> Vec<usize> {
        let h = 1.0 / (self.n_grid - 1) as f64;
        self.obs_locations
            .iter()
            .map(|x| ((x / h).round() as usize).min(self.n_grid - 1))
            .collect()
    }

    pub fn truncation(&self) -> f64 {
        norm_quantile(self.trunc_quantile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid < 3 {
            return Err(Error::input("PDE grid needs at least three nodes"));
        }
        if self.kl_rank == 0 || self.kl_rank > self.n_grid {
            return Err(Error::input("KL rank must be in 1..=n_grid"));
        }
        if self.obs_locations.is_empty() {
            return Err(Error::input("PDE problem needs observation locations"));
        }
        if !(self.sigma >= 0.0 && self.source_delta > 0.0 && self.kernel_lengthscale > 0.0 && self.kernel_variance > 0.0)
        {
            return Err(Error::input("PDE scales must be positive"));
        }
        if !(self.trunc_quantile > 0.5 && self.trunc_quantile < 1.0) {
            return Err(Error::input("truncation quantile must be in (0.5, 1)"));
        }
        Ok(())
    }
}

/// Truncated eigen-expansion of the log-conductivity prior.
#[derive(Clone, Debug)]
pub struct KlPrior {
    pub mean: f64,
    /// Descending eigenvalues of the retained modes.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors, one column per mode.
    pub modes: DMatrix<f64>,
    pub variance_fraction: f64,
}

impl KlPrior {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `log κ(X) = mean + Σ_r √λ_r u_r ψ_r`.
    pub fn log_field(&self, u: &[f64]) -> DVector<f64> {
        let coeffs = DVector::from_iterator(self.rank(), u.iter().zip(&self.eigenvalues).map(|(x, l)| x * l.sqrt()));
        (&self.modes * coeffs).add_scalar(self.mean)
    }
}

pub fn build_kl_prior(spec: &PdeSpec) -> Result<KlPrior> {
    spec.validate()?;
    let x = spec.grid();
    let n = x.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        spec.kernel_variance * (-(x[i] - x[j]).abs() / spec.kernel_lengthscale).exp()
    });
    let trace = k.trace();
    let eig = SymmetricEigen::new(k);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let r = spec.kl_rank;
    let eigenvalues: Vec<f64> = order[..r].iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut modes = DMatrix::zeros(n, r);
    for (c, &i) in order[..r].iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        // Fix the sign so the largest-magnitude entry is positive.
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        modes.set_column(c, &col);
    }
    Ok(KlPrior {
        mean: spec.prior_mean,
        variance_fraction: eigenvalues.iter().sum::<f64>() / trace,
        eigenvalues,
        modes,
    })
}

/// Observation map `u ↦ v(X_obs)` through the KL field and the solver.
#[derive(Clone, Debug)]
pub struct PdeForward {
    pub kl: KlPrior,
    pub source: Vec<f64>,
    pub obs_idx: Vec<usize>,
}

impl PdeForward {
    pub fn new(spec: &PdeSpec) -> Result<Self> {
        Ok(Self {
            kl: build_kl_prior(spec)?,
            source: spec.source(&spec.grid()),
            obs_idx: spec.obs_indices(),
        })
    }

    pub fn solve(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.kl.rank() {
            return Err(Error::Dimension {
                expected: self.kl.rank(),
                got: u.len(),
            });
        }
        let kappa: Vec<f64> = self.kl.log_field(u).iter().map(|l| l.exp()).collect();
        pde_solve_bvp(&kappa, &self.source, 1.0, 1.0)
    }

    pub fn observe(&self, u: &[f64]) -> Result<Vec<f64>> {
        let v = self.solve(u)?;
        Ok(self.obs_idx.iter().map(|&i| v[i]).collect())
    }
}

#[derive(Clone, Debug)]
pub struct PdeInstance {
    pub spec: PdeSpec,
    pub seed: u64,
    pub forward_map: Arc<PdeForward>,
    pub u_true: Vec<f64>,
    pub y: DVector<f64>,
    pub problem: InverseProblem,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PdeRecord {
    pub spec: PdeSpec,
    pub seed: u64,
    pub u_true: Vec<f64>,
    pub y: Vec<f64>,
    pub variance_fraction: f64,
}

/// Standard normal log-density in `R` dimensions.
fn std_normal_log_prior(u: &[f64]) -> f64 {
    -0.5 * (u.iter().map(|x| x * x).sum::<f64>() + u.len() as f64 * LN_2PI)
}

pub fn build_pde_problem(spec: &PdeSpec, seed: u64) -> Result<PdeInstance> {
    let fwd = Arc::new(PdeForward::new(spec)?);
    let r = spec.kl_rank;
    let mut g = rng::rng(seed);
    let u_true: Vec<f64> = std_normal_vec(&mut g, r).iter().copied().collect();
    let clean = fwd.observe(&u_true)?;
    let p = clean.len();
    let noise = std_normal_vec(&mut g, p);
    let y = DVector::from_iterator(p, clean.iter().zip(noise.iter()).map(|(v, e)| v + spec.sigma * e));
    let alpha = spec.truncation();
    // A zero noise level is allowed for harness checks; the likelihood
    // itself needs a positive variance.
    let var = (spec.sigma * spec.sigma).max(f64::MIN_POSITIVE);
    let f2 = fwd.clone();
    let problem = InverseProblem::forward(
        Arc::new(std_normal_log_prior),
        vec![(-alpha, alpha); r],
        y.clone(),
        DMatrix::identity(p, p) * var,
    )?
    .with_exact_target(Arc::new(move |u| f2.observe(u)));
    Ok(PdeInstance {
        spec: spec.clone(),
        seed,
        forward_map: fwd,
        u_true,
        y,
        problem,
    })
}

impl PdeInstance {
    pub fn record(&self) -> PdeRecord {
        PdeRecord {
            spec: self.spec.clone(),
            seed: self.seed,
            u_true: self.u_true.clone(),
            y: self.y.iter().copied().collect(),
            variance_fraction: self.forward_map.kl.variance_fraction,
        }
    }
}
