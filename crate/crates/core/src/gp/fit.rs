use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::emulator::{GaussianEmulator, MeanFn};
use super::kernel::{rows_of, Kernel, KernelFamily};
use super::optim::nelder_mead;
use crate::error::{Error, Result};
use crate::linalg::cholesky_jitter;
use crate::rng;
use crate::stats::LN_2PI;

/// Box constraints for hyperparameter fitting (all on the natural scale).
#[derive(Clone, Debug, PartialEq)]
pub struct FitBounds {
    pub lengthscales: Vec<(f64, f64)>,
    pub variance: (f64, f64),
    pub tau2: (f64, f64),
}

impl FitBounds {
    /// Default bounds: lengthscales in [0.01, 10] times each input's range,
    /// variance in [1e-3, 1e3] times the output variance, and τ² in
    /// [1e-10, 1e-4] times the output variance.
    pub fn default_for(inputs: &DMatrix<f64>, outputs: &DVector<f64>) -> Self {
        let lengthscales = (0..inputs.ncols())
            .map(|j| {
                let col = inputs.column(j);
                let range = col.max() - col.min();
                let range = if range > 0.0 { range } else { 1.0 };
                (0.01 * range, 10.0 * range)
            })
            .collect();
        let vy = output_variance(outputs);
        Self {
            lengthscales,
            variance: (1e-3 * vy, 1e3 * vy),
            tau2: (1e-10 * vy, 1e-4 * vy),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.lengthscales.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: self.lengthscales.len(),
            });
        }
        let all = self.lengthscales.iter().chain([&self.variance, &self.tau2]);
        for &(lo, hi) in all {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(Error::input(format!("invalid fit bounds [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    fn log_box(&self) -> Vec<(f64, f64)> {
        self.lengthscales
            .iter()
            .chain([&self.variance, &self.tau2])
            .map(|&(lo, hi)| (lo.ln(), hi.ln()))
            .collect()
    }
}

fn output_variance(y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let m = y.mean();
    let v = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    if v > 0.0 && v.is_finite() {
        v
    } else {
        1.0
    }
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub family: KernelFamily,
    pub restarts: usize,
    pub seed: u64,
    pub max_evals: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            family: KernelFamily::SquaredExponential,
            restarts: 5,
            seed: 0,
            max_evals: 2000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub kernel: Kernel,
    pub mean_const: f64,
    pub tau2: f64,
    pub log_marginal_likelihood: f64,
    /// Log marginal likelihood at each restart's starting point.
    pub initial_values: Vec<f64>,
    /// Set when no restart improved on its starting point.
    pub warning: bool,
    pub emulator: GaussianEmulator,
}

/// Profile log marginal likelihood with the constant mean set to its GLS
/// estimate. Returns `(lml, mean_const)`.
fn profile_lml(
    rows: &[Vec<f64>],
    y: &DVector<f64>,
    kernel: &Kernel,
    tau2: f64,
) -> Option<(f64, f64)> {
    let n = rows.len();
    let mut gram = kernel.gram(rows);
    for i in 0..n {
        gram[(i, i)] += tau2;
    }
    let chol = cholesky_jitter(&gram, kernel.variance).ok()?;
    let ones = DVector::from_element(n, 1.0);
    let kinv_one = chol.solve(&ones);
    let kinv_y = chol.solve(y);
    let mean = kinv_one.dot(y) / kinv_one.sum();
    let resid = y - DVector::from_element(n, mean);
    let alpha = kinv_y - kinv_one * mean;
    let lml = -0.5 * resid.dot(&alpha) - 0.5 * chol.log_det() - 0.5 * n as f64 * LN_2PI;
    lml.is_finite().then_some((lml, mean))
}

fn from_unconstrained(z: &[f64], logbox: &[(f64, f64)]) -> Vec<f64> {
    z.iter()
        .zip(logbox)
        .map(|(z, (lo, hi))| {
            let s = 1.0 / (1.0 + (-z).exp());
            (lo + (hi - lo) * s).exp().clamp(lo.exp(), hi.exp())
        })
        .collect()
}

fn to_unconstrained(theta: &[f64], logbox: &[(f64, f64)]) -> Vec<f64> {
    theta
        .iter()
        .zip(logbox)
        .map(|(t, (lo, hi))| {
            if hi - lo <= 0.0 {
                return 0.0;
            }
            let s = ((t.ln() - lo) / (hi - lo)).clamp(1e-9, 1.0 - 1e-9);
            (s / (1.0 - s)).ln()
        })
        .collect()
}

/// Maximum marginal likelihood fit of a constant-mean GP, multi-start
/// Nelder-Mead over log-parameters squashed into the bounds.
pub fn fit_hyperparameters(
    inputs: &DMatrix<f64>,
    outputs: &DVector<f64>,
    bounds: &FitBounds,
    opts: &FitOptions,
) -> Result<FitResult> {
    let n = inputs.nrows();
    let d = inputs.ncols();
    if n < 2 {
        return Err(Error::input("hyperparameter fitting needs at least 2 design points"));
    }
    if outputs.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: outputs.len(),
        });
    }
    bounds.validate(d)?;
    let rows = rows_of(inputs);
    let logbox = bounds.log_box();

    let objective = |z: &[f64]| -> f64 {
        let theta = from_unconstrained(z, &logbox);
        let Ok(kernel) = Kernel::new(opts.family, theta[d], theta[..d].to_vec()) else {
            return f64::INFINITY;
        };
        match profile_lml(&rows, outputs, &kernel, theta[d + 1]) {
            Some((lml, _)) => -lml,
            None => f64::INFINITY,
        }
    };

    let mut r = rng::rng(opts.seed);
    let restarts = opts.restarts.max(1);
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(restarts);
    // Heuristic start: lengthscale at 30% of range, variance = var(y),
    // τ² at the geometric middle of its box.
    let heuristic: Vec<f64> = bounds
        .lengthscales
        .iter()
        .map(|&(lo, hi)| (0.3 * hi / 10.0).clamp(lo, hi))
        .chain([
            output_variance(outputs).clamp(bounds.variance.0, bounds.variance.1),
            (bounds.tau2.0 * bounds.tau2.1).sqrt(),
        ])
        .collect();
    starts.push(to_unconstrained(&heuristic, &logbox));
    while starts.len() < restarts {
        let theta: Vec<f64> = logbox
            .iter()
            .map(|&(lo, hi)| if hi > lo { r.random_range(lo..hi).exp() } else { lo.exp() })
            .collect();
        starts.push(to_unconstrained(&theta, &logbox));
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut initial_values = Vec::with_capacity(restarts);
    let mut improved = false;
    for z0 in &starts {
        let f0 = objective(z0);
        initial_values.push(-f0);
        let m = nelder_mead(objective, z0, 1.0, opts.max_evals, 1e-10);
        let (z, f) = if m.value <= f0 { (m.x, m.value) } else { (z0.clone(), f0) };
        if f < f0 - 1e-12 * (1.0 + f0.abs()) {
            improved = true;
        }
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((z, f));
        }
    }
    let (z, f) = best.expect("at least one restart");
    if !f.is_finite() {
        return Err(Error::Numerical(
            "marginal likelihood is not finite at any restart".into(),
        ));
    }
    if !improved {
        warn!("hyperparameter fit: no restart improved on its initial point");
    }
    let theta = from_unconstrained(&z, &logbox);
    let kernel = Kernel::new(opts.family, theta[d], theta[..d].to_vec())?;
    let tau2 = theta[d + 1];
    let (lml, mean_const) =
        profile_lml(&rows, outputs, &kernel, tau2).ok_or_else(|| Error::Numerical("refit failed".into()))?;
    let emulator = GaussianEmulator::condition(MeanFn::Constant(mean_const), kernel.clone(), inputs, outputs, tau2)?;
    Ok(FitResult {
        kernel,
        mean_const,
        tau2,
        log_marginal_likelihood: lml,
        initial_values,
        warning: !improved,
        emulator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::psd_factor;

    #[test]
    fn lml_matches_dense_gaussian_density() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 0.3, 1.1]);
        let y = DVector::from_column_slice(&[0.5, -0.2, 1.0]);
        let k = Kernel::squared_exponential(1.7, vec![0.4]).unwrap();
        let (c, tau2) = (0.3, 1e-2);
        let em = GaussianEmulator::condition(MeanFn::Constant(c), k.clone(), &x, &y, tau2).unwrap();
        // Brute force: log N(y | c, K + τ²I) via explicit inverse and determinant.
        let mut cov = k.gram(&rows_of(&x));
        for i in 0..3 {
            cov[(i, i)] += tau2;
        }
        let r = &y - DVector::from_element(3, c);
        let inv = cov.clone().try_inverse().unwrap();
        let want = -0.5 * (r.transpose() * inv * &r)[0] - 0.5 * cov.determinant().ln() - 1.5 * LN_2PI;
        assert!((em.log_marginal_likelihood() - want).abs() < 1e-10);
    }

    fn sample_gp(n: usize, ell: f64, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut r = rng::rng(seed);
        let x = DMatrix::from_fn(n, 1, |i, _| (i as f64 + r.random_range(0.0..1.0)) / n as f64);
        let k = Kernel::squared_exponential(1.0, vec![ell]).unwrap();
        let mut gram = k.gram(&rows_of(&x));
        for i in 0..n {
            gram[(i, i)] += 1e-6;
        }
        let l = psd_factor(&gram);
        let y = l * rng::std_normal_vec(&mut r, n);
        (x, y)
    }

    #[test]
    fn recovers_lengthscale_within_factor_two() {
        let (x, y) = sample_gp(40, 0.2, 31);
        let bounds = FitBounds::default_for(&x, &y);
        let fit = fit_hyperparameters(&x, &y, &bounds, &FitOptions::default()).unwrap();
        let l = fit.kernel.lengthscales[0];
        assert!(l > 0.1 && l < 0.4, "lengthscale {l}");
    }

    #[test]
    fn result_in_bounds_and_beats_every_start() {
        let (x, y) = sample_gp(12, 0.3, 4);
        let bounds = FitBounds {
            lengthscales: vec![(0.5, 2.0)],
            variance: (0.1, 10.0),
            tau2: (1e-8, 1e-4),
        };
        let fit = fit_hyperparameters(&x, &y, &bounds, &FitOptions { seed: 9, ..Default::default() }).unwrap();
        let l = fit.kernel.lengthscales[0];
        assert!((0.5..=2.0).contains(&l));
        assert!((0.1..=10.0).contains(&fit.kernel.variance));
        assert!((1e-8..=1e-4).contains(&fit.tau2));
        assert_eq!(fit.initial_values.len(), 5);
        for v in &fit.initial_values {
            assert!(fit.log_marginal_likelihood >= *v - 1e-9);
        }
    }

    #[test]
    fn rejects_single_point() {
        let x = DMatrix::from_element(1, 1, 0.0);
        let y = DVector::from_element(1, 0.0);
        let b = FitBounds::default_for(&x, &y);
        assert!(fit_hyperparameters(&x, &y, &b, &FitOptions::default()).is_err());
    }
}
