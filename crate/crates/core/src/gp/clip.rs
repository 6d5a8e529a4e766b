use std::fmt;
use std::sync::Arc;

use rand::Rng;

use super::emulator::GaussianEmulator;
use crate::linalg::log_sum_exp;
use crate::rng::std_normal;
use crate::stats::{norm_cdf, norm_pdf, LN_2PI};

pub type BoundFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Supremum over `y` of a Gaussian log-likelihood with `P` independent
/// components of variance `sigma2`, plus `log_prior`:
/// `-(P/2) log(2πσ²) + log π₀(u)`.
pub fn log_likelihood_supremum(p: usize, sigma2: f64, log_prior: f64) -> f64 {
    -0.5 * p as f64 * (LN_2PI + sigma2.ln()) + log_prior
}

/// The alternative bound `log det(2πσ² I) + log π₀(u)`, which has the
/// opposite sign on the log-determinant term.
pub fn log_det_bound(p: usize, sigma2: f64, log_prior: f64) -> f64 {
    p as f64 * (LN_2PI + sigma2.ln()) + log_prior
}

/// `E[min(X, b)]` for `X ~ N(mu, s²)`.
pub fn clipped_mean(mu: f64, s: f64, b: f64) -> f64 {
    if b == f64::INFINITY {
        return mu;
    }
    if s <= 0.0 {
        return mu.min(b);
    }
    let beta = (b - mu) / s;
    mu * norm_cdf(beta) - s * norm_pdf(beta) + b * norm_cdf(-beta)
}

/// `log E[exp(min(X, b))]` for `X ~ N(mu, s²)`, evaluated in log space.
pub fn clipped_exp_mean(mu: f64, s: f64, b: f64) -> f64 {
    if s <= 0.0 {
        return mu.min(b);
    }
    if b == f64::INFINITY {
        return mu + 0.5 * s * s;
    }
    let below = mu + 0.5 * s * s + norm_cdf((b - mu - s * s) / s).ln();
    let above = b + norm_cdf((mu - b) / s).ln();
    log_sum_exp(&[below, above])
}

/// A GP whose values are capped pointwise: `f_clip(u) = min(f(u), b(u))`.
#[derive(Clone)]
pub struct ClippedEmulator {
    pub base: GaussianEmulator,
    pub bound: BoundFn,
}

impl fmt::Debug for ClippedEmulator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClippedEmulator").field("base", &self.base).finish_non_exhaustive()
    }
}

impl ClippedEmulator {
    pub fn new(base: GaussianEmulator, bound: BoundFn) -> Self {
        Self { base, bound }
    }

    pub fn bound_at(&self, u: &[f64]) -> f64 {
        (self.bound)(u)
    }

    /// Mean of the clipped predictive law.
    pub fn predict_mean(&self, u: &[f64]) -> f64 {
        let (m, v) = self.base.predict(u);
        clipped_mean(m, v.sqrt(), self.bound_at(u))
    }

    /// `log E[exp(f_clip(u))]`.
    pub fn log_exp_mean(&self, u: &[f64]) -> f64 {
        let (m, v) = self.base.predict(u);
        clipped_exp_mean(m, v.sqrt(), self.bound_at(u))
    }

    /// One draw from the pointwise clipped law: sample the Gaussian, then cap.
    pub fn sample<R: Rng + ?Sized>(&self, u: &[f64], rng: &mut R) -> f64 {
        let (m, v) = self.base.predict(u);
        (m + v.sqrt() * std_normal(rng)).min(self.bound_at(u))
    }

    /// Clip an already-drawn base value.
    pub fn clip(&self, u: &[f64], value: f64) -> f64 {
        value.min(self.bound_at(u))
    }
}
