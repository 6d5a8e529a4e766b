use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::config::{ChainOutput, SamplerConfig};
use super::kernel::{mh_u_move, ChainRecorder, UKernel};
use crate::error::{Error, Result};
use crate::posterior::{Grid, InverseProblem};
use crate::rng::{self, std_normal_vec, SeededRng};

/// Random-walk Metropolis-Hastings on an arbitrary log density.
pub fn rw_mh<F>(log_density: F, u0: &[f64], config: &SamplerConfig) -> Result<ChainOutput>
where
    F: Fn(&[f64]) -> f64,
{
    config.validate(u0.len())?;
    let mut u = u0.to_vec();
    let mut log_cur = log_density(&u);
    if !log_cur.is_finite() {
        return Err(Error::Initialization(format!("log density at the initial point is {log_cur}")));
    }
    let mut kernel = UKernel::new(config);
    let mut rec = ChainRecorder::new(config, u.len(), false, false);
    let mut rng = rng::child_rng(config.seed, &[1]);
    for t in 0..config.n_iterations {
        for _ in 0..config.u_steps {
            let m = mh_u_move(&kernel, &mut u, &mut log_cur, &log_density, &mut rng);
            kernel.adapt(t, m.alpha);
            rec.u_move(t, m);
        }
        rec.end_iteration(t, &u, log_cur, None);
    }
    Ok(rec.finish("rw-mh", kernel.factor()))
}

/// pCN move `m + ρ(f − m) + √(1−ρ²)·Lξ` with `ξ ~ N(0, I)`. For `ρ = 1` the
/// state is returned unchanged and no randomness is consumed.
pub fn pcn_update(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    f: &DVector<f64>,
    rho: f64,
    rng: &mut SeededRng,
) -> DVector<f64> {
    if rho >= 1.0 {
        return f.clone();
    }
    let xi = factor * std_normal_vec(rng, factor.ncols());
    mean + (f - mean) * rho + xi * (1.0 - rho * rho).sqrt()
}

pub type FiniteLogDensity = Arc<dyn Fn(&[f64], &DVector<f64>) -> f64 + Send + Sync>;

/// Trajectory law given by a finite Gaussian vector `f ~ N(mean, L Lᵀ)` and
/// the map `(u, f) ↦ log π(u; f)`.
#[derive(Clone)]
pub struct FiniteGaussianLaw {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    log_density: FiniteLogDensity,
}

impl std::fmt::Debug for FiniteGaussianLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FiniteGaussianLaw")
            .field("dim", &self.mean.len())
            .finish()
    }
}

impl FiniteGaussianLaw {
    pub fn new(mean: DVector<f64>, factor: DMatrix<f64>, log_density: FiniteLogDensity) -> Result<Self> {
        if factor.nrows() != mean.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                got: factor.nrows(),
            });
        }
        Ok(Self {
            mean,
            factor,
            log_density,
        })
    }

    /// Gaussian law of a scalar target's values on the nodes of `grid`;
    /// `u` is mapped to its containing cell.
    pub fn on_grid(problem: Arc<InverseProblem>, grid: Arc<Grid>, mean: DVector<f64>, factor: DMatrix<f64>) -> Result<Self> {
        if problem.target_dim() != 1 {
            return Err(Error::Capability("gridded trajectory laws need a scalar target".into()));
        }
        if mean.len() != grid.len() {
            return Err(Error::Dimension {
                expected: grid.len(),
                got: mean.len(),
            });
        }
        let log_density: FiniteLogDensity = Arc::new(move |u: &[f64], f: &DVector<f64>| match grid.locate(u) {
            Some(i) => problem.log_unnorm_density(u, &[f[i]]),
            None => f64::NEG_INFINITY,
        });
        Self::new(mean, factor, log_density)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn draw(&self, rng: &mut SeededRng) -> DVector<f64> {
        &self.mean + &self.factor * std_normal_vec(rng, self.factor.ncols())
    }

    pub fn pcn(&self, f: &DVector<f64>, rho: f64, rng: &mut SeededRng) -> DVector<f64> {
        pcn_update(&self.mean, &self.factor, f, rho, rng)
    }

    pub fn log_density(&self, u: &[f64], f: &DVector<f64>) -> f64 {
        (self.log_density)(u, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::config::UProposal;

    fn std_gauss(u: &[f64]) -> f64 {
        -0.5 * u.iter().map(|x| x * x).sum::<f64>()
    }

    #[test]
    fn standard_gaussian_moments() {
        let cfg = SamplerConfig::new(100_000, 5_000, UProposal::random_walk(vec![1.0, 1.0]), 11);
        let out = rw_mh(std_gauss, &[0.5, -0.5], &cfg).unwrap();
        assert_eq!(out.n_samples(), cfg.n_retained());
        let (m, c) = crate::linalg::sample_moments(&out.samples);
        assert!(m.amax() < 0.05, "{m}");
        assert!((c - DMatrix::<f64>::identity(2, 2)).amax() < 0.1);
        assert!((out.u_acceptance - 0.3).abs() < 0.05, "{}", out.u_acceptance);
    }

    #[test]
    fn zero_scale_is_constant() {
        let cfg = SamplerConfig::new(500, 100, UProposal::random_walk(vec![0.0]), 2);
        let out = rw_mh(|u| -u[0] * u[0], &[0.3], &cfg).unwrap();
        assert!(out.samples.iter().all(|v| *v == 0.3));
        assert_eq!(out.u_acceptance, 1.0);
    }

    #[test]
    fn zero_initial_density_errors() {
        let cfg = SamplerConfig::new(10, 1, UProposal::random_walk(vec![1.0]), 2);
        let r = rw_mh(|u| if u[0] > 0.0 { 0.0 } else { f64::NEG_INFINITY }, &[-1.0], &cfg);
        assert!(matches!(r, Err(Error::Initialization(_))));
    }

    #[test]
    fn logged_alpha_matches_density_ratio() {
        let mut cfg = SamplerConfig::new(2000, 500, UProposal::random_walk(vec![0.8, 0.3]), 5);
        cfg.record_moves = true;
        let out = rw_mh(std_gauss, &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(out.moves.len(), 2000);
        for m in &out.moves {
            let a = (m.log_proposed - m.log_current).exp().min(1.0);
            assert!((a - m.alpha).abs() < 1e-12);
        }
    }

    #[test]
    fn bit_identical_reruns() {
        let cfg = SamplerConfig::new(3000, 1000, UProposal::random_walk(vec![1.0]), 77).with_thinning(7);
        let a = rw_mh(|u| -u[0].abs(), &[0.0], &cfg).unwrap();
        let b = rw_mh(|u| -u[0].abs(), &[0.0], &cfg).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.log_density_trace, b.log_density_trace);
        assert_eq!(a.n_samples(), 2000 / 7);
    }

    #[test]
    fn uniform_prior_target() {
        // Likelihood ≡ 1 on a box: draws should follow the uniform prior.
        let cfg = SamplerConfig::new(60_000, 2_000, UProposal::random_walk(vec![0.5]), 3);
        let out = rw_mh(|u| if (0.0..=2.0).contains(&u[0]) { 0.0 } else { f64::NEG_INFINITY }, &[1.0], &cfg).unwrap();
        let (m, c) = crate::linalg::sample_moments(&out.samples);
        assert!((m[0] - 1.0).abs() < 0.05);
        assert!((c[(0, 0)] - 1.0 / 3.0).abs() < 0.03);
    }

    #[test]
    fn pcn_limits() {
        let mean = DVector::from_column_slice(&[1.0, -1.0]);
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.8]);
        let f = DVector::from_column_slice(&[3.0, 2.0]);
        let mut r = rng::rng(1);
        assert_eq!(pcn_update(&mean, &l, &f, 1.0, &mut r), f);
        let mut r1 = rng::rng(4);
        let mut r2 = rng::rng(4);
        let fresh = &mean + &l * std_normal_vec(&mut r2, 2);
        let moved = pcn_update(&mean, &l, &f, 0.0, &mut r1);
        assert!((moved - fresh).amax() < 1e-14);
    }

    #[test]
    fn pcn_preserves_gaussian() {
        let d = 8;
        let mean = DVector::from_fn(d, |i, _| i as f64 * 0.3 - 1.0);
        let cov = DMatrix::from_fn(d, d, |i, j| (-((i as f64 - j as f64).powi(2)) / 8.0).exp() * 1.5);
        let l = cov.clone().cholesky().unwrap().l();
        let mut r = rng::rng(9);
        let mut f = &mean + &l * std_normal_vec(&mut r, d);
        let n = 10_000;
        let probes = [0, 2, 4, 6, 7];
        let mut sums = vec![(0.0, 0.0); probes.len()];
        for _ in 0..n {
            f = pcn_update(&mean, &l, &f, 0.9, &mut r);
            for (k, &p) in probes.iter().enumerate() {
                sums[k].0 += f[p];
                sums[k].1 += (f[p] - mean[p]).powi(2);
            }
        }
        // IACT of an AR(1) with coefficient 0.9 is 19.
        let ess = n as f64 / 19.0;
        for (k, &p) in probes.iter().enumerate() {
            let v = cov[(p, p)];
            let m = sums[k].0 / n as f64;
            let s2 = sums[k].1 / n as f64;
            assert!((m - mean[p]).abs() < 4.0 * (v / ess).sqrt(), "mean at {p}");
            // Var of a squared Gaussian deviation is 2v²; the AR(1) IACT of
            // the squares is (1 + ρ²)/(1 − ρ²).
            let ess2 = n as f64 / ((1.0 + 0.81) / (1.0 - 0.81));
            assert!((s2 - v).abs() < 4.0 * (2.0 * v * v / ess2).sqrt(), "var at {p}");
        }
    }
}
