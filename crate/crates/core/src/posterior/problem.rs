use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spd_factor;
use crate::stats::LN_2PI;

pub type LogDensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type TargetFn = Arc<dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync>;

/// What the emulated map represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetRole {
    /// `f(u)` predicts the observable; Gaussian additive noise with covariance Σ.
    ForwardModel,
    /// `f(u)` is `log L(u; y)`.
    LogLikelihood,
    /// `f(u)` is `log π₀(u) + log L(u; y)`.
    LogPosterior,
}

/// A Bayesian inverse problem with a (possibly emulated) target map.
#[derive(Clone)]
pub struct InverseProblem {
    role: TargetRole,
    dim: usize,
    prior: LogDensityFn,
    support: Vec<(f64, f64)>,
    y: DVector<f64>,
    noise_cov: DMatrix<f64>,
    noise: Option<NoiseFactor>,
    exact_target: Option<TargetFn>,
}

#[derive(Clone)]
struct NoiseFactor {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
    diagonal: bool,
}

impl fmt::Debug for InverseProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InverseProblem")
            .field("role", &self.role)
            .field("dim", &self.dim)
            .field("support", &self.support)
            .field("n_obs", &self.y.len())
            .finish_non_exhaustive()
    }
}

fn check_support(support: &[(f64, f64)]) -> Result<()> {
    if support.is_empty() {
        return Err(Error::input("support box needs at least one dimension"));
    }
    for &(lo, hi) in support {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::input(format!("invalid support interval [{lo}, {hi}]")));
        }
    }
    Ok(())
}

impl InverseProblem {
    /// Forward-model problem `y = f(u) + e`, `e ~ N(0, Σ)`. The support may
    /// have infinite sides; grid methods require a finite box.
    pub fn forward(
        prior: LogDensityFn,
        support: Vec<(f64, f64)>,
        y: DVector<f64>,
        noise_cov: DMatrix<f64>,
    ) -> Result<Self> {
        check_support(&support)?;
        let p = y.len();
        if noise_cov.shape() != (p, p) {
            return Err(Error::input(format!(
                "noise covariance must be {p}x{p}, got {}x{}",
                noise_cov.nrows(),
                noise_cov.ncols()
            )));
        }
        let chol = spd_factor(&noise_cov, "noise covariance")?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let diagonal = (0..p).all(|i| (0..p).all(|j| i == j || noise_cov[(i, j)] == 0.0));
        Ok(Self {
            role: TargetRole::ForwardModel,
            dim: support.len(),
            prior,
            support,
            y,
            noise_cov,
            noise: Some(NoiseFactor { chol, log_det, diagonal }),
            exact_target: None,
        })
    }

    /// Log-density problem: the target map is a scalar log-likelihood or
    /// log-posterior.
    pub fn log_density(role: TargetRole, prior: LogDensityFn, support: Vec<(f64, f64)>) -> Result<Self> {
        if role == TargetRole::ForwardModel {
            return Err(Error::input("use InverseProblem::forward for forward-model targets"));
        }
        check_support(&support)?;
        Ok(Self {
            role,
            dim: support.len(),
            prior,
            support,
            y: DVector::zeros(0),
            noise_cov: DMatrix::zeros(0, 0),
            noise: None,
            exact_target: None,
        })
    }

    pub fn with_exact_target(mut self, f: TargetFn) -> Self {
        self.exact_target = Some(f);
        self
    }

    pub fn role(&self) -> TargetRole {
        self.role
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    /// Dimension of the target map's output.
    pub fn target_dim(&self) -> usize {
        match self.role {
            TargetRole::ForwardModel => self.y.len(),
            _ => 1,
        }
    }

    pub fn exact_target(&self) -> Option<&TargetFn> {
        self.exact_target.as_ref()
    }

    pub fn in_support(&self, u: &[f64]) -> bool {
        u.len() == self.dim && u.iter().zip(&self.support).all(|(x, (lo, hi))| x >= lo && x <= hi)
    }

    /// `log π₀(u)`, `-∞` outside the support.
    pub fn log_prior(&self, u: &[f64]) -> f64 {
        if !self.in_support(u) {
            return f64::NEG_INFINITY;
        }
        (self.prior)(u)
    }

    /// `log N(y | f_u, Σ)`.
    pub fn gaussian_log_likelihood(&self, f_u: &[f64]) -> f64 {
        let nf = self.noise.as_ref().expect("forward-model problem");
        let r = &self.y - DVector::from_column_slice(f_u);
        let quad = if nf.diagonal {
            r.iter().enumerate().map(|(i, v)| v * v / self.noise_cov[(i, i)]).sum::<f64>()
        } else {
            let z = nf.chol.l_dirty().solve_lower_triangular(&r).expect("triangular factor");
            z.norm_squared()
        };
        -0.5 * (quad + nf.log_det + self.y.len() as f64 * LN_2PI)
    }

    /// `log π(u; f)` given the trajectory value `f_u = f(u)`.
    pub fn log_unnorm_density(&self, u: &[f64], f_u: &[f64]) -> f64 {
        let lp = self.log_prior(u);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        match self.role {
            TargetRole::ForwardModel => lp + self.gaussian_log_likelihood(f_u),
            TargetRole::LogLikelihood => lp + f_u[0],
            TargetRole::LogPosterior => f_u[0],
        }
    }

    pub fn unnorm_density(&self, u: &[f64], f_u: &[f64]) -> f64 {
        self.log_unnorm_density(u, f_u).exp()
    }

    /// Exact `log π(u)` through the ground-truth target map.
    pub fn exact_log_density(&self, u: &[f64]) -> Result<f64> {
        if !self.in_support(u) {
            return Ok(f64::NEG_INFINITY);
        }
        let f = self
            .exact_target
            .as_ref()
            .ok_or_else(|| Error::Capability("problem has no exact target map".into()))?;
        Ok(self.log_unnorm_density(u, &f(u)?))
    }

    /// `log π₀(u) + log N(y | μ, Σ + diag(s²))`: the pointwise expectation of
    /// the forward-model likelihood under `f(u) ~ N(μ, diag(s²))`.
    pub fn log_eup_forward(&self, u: &[f64], mean: &[f64], var: &[f64]) -> Result<f64> {
        if self.role != TargetRole::ForwardModel {
            return Err(Error::input("closed-form forward EUP needs a forward-model problem"));
        }
        if let Some(v) = var.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::input(format!("predictive variance must be nonnegative, got {v}")));
        }
        let lp = self.log_prior(u);
        if lp == f64::NEG_INFINITY {
            return Ok(lp);
        }
        let p = self.y.len();
        let r = &self.y - DVector::from_column_slice(mean);
        let nf = self.noise.as_ref().expect("forward-model problem");
        if nf.diagonal {
            let mut acc = 0.0;
            for i in 0..p {
                let s = self.noise_cov[(i, i)] + var[i];
                acc += r[i] * r[i] / s + s.ln();
            }
            return Ok(lp - 0.5 * (acc + p as f64 * LN_2PI));
        }
        let mut cov = self.noise_cov.clone();
        for i in 0..p {
            cov[(i, i)] += var[i];
        }
        let chol = spd_factor(&cov, "inflated noise covariance")?;
        let z = chol.l_dirty().solve_lower_triangular(&r).expect("triangular factor");
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(lp - 0.5 * (z.norm_squared() + log_det + p as f64 * LN_2PI))
    }
}

/// Log-density of a product of uniforms on a box (constant inside).
pub fn uniform_box_log_prior(support: &[(f64, f64)]) -> LogDensityFn {
    let lv = -support.iter().map(|(lo, hi)| (hi - lo).ln()).sum::<f64>();
    Arc::new(move |_| lv)
}
