use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::emulator::GaussianEmulator;
use super::kernel::{Kernel, KernelFamily};
use crate::error::{Error, Result};
use crate::rng::{self, std_normal};

#[derive(Debug)]
struct Features {
    /// Frequencies, one row per feature.
    omega: DMatrix<f64>,
    phase: Vec<f64>,
    scale: f64,
    n_features: usize,
}

impl Features {
    /// Features come in cos/sin pairs sharing a frequency, which makes the
    /// implied kernel exactly stationary; an odd count leaves one lone cosine.
    fn eval(&self, u: &[f64], weights: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            let f = i / 2;
            let mut z = self.phase[f];
            for (j, x) in u.iter().enumerate() {
                z += self.omega[(f, j)] * x;
            }
            acc += w * if i % 2 == 0 { z.cos() } else { z.sin() };
        }
        self.scale * acc
    }
}

/// Random-Fourier-feature trajectory sampler for squared-exponential GPs.
/// Feature frequencies and phases are frozen at construction.
#[derive(Clone, Debug)]
pub struct RffSampler {
    kernel: Kernel,
    features: Arc<Features>,
}

impl RffSampler {
    pub fn new(kernel: &Kernel, n_features: usize, seed: u64) -> Result<Self> {
        if kernel.family != KernelFamily::SquaredExponential {
            return Err(Error::Capability(
                "random Fourier features are implemented for the squared-exponential kernel only".into(),
            ));
        }
        if n_features == 0 {
            return Err(Error::Capability("random Fourier features need n_features >= 1".into()));
        }
        let d = kernel.dim();
        let n_freq = n_features.div_ceil(2);
        let mut r = rng::rng(seed);
        let omega = DMatrix::from_fn(n_freq, d, |_, j| std_normal(&mut r) / kernel.lengthscales[j]);
        let phase = (0..n_freq)
            .map(|_| r.random_range(0.0..std::f64::consts::TAU))
            .collect();
        Ok(Self {
            kernel: kernel.clone(),
            features: Arc::new(Features {
                omega,
                phase,
                scale: (2.0 * kernel.variance / n_features as f64).sqrt(),
                n_features,
            }),
        })
    }

    pub fn n_features(&self) -> usize {
        self.features.n_features
    }

    /// A prior trajectory (no conditioning, zero mean).
    pub fn prior_trajectory(&self, seed: u64) -> RffTrajectory {
        let mut r = rng::rng(seed);
        RffTrajectory {
            features: self.features.clone(),
            weights: rng::std_normal_vec(&mut r, self.n_features()),
            posterior: None,
        }
    }

    /// A posterior trajectory of `emulator` by pathwise conditioning:
    /// `f(u) = m(u) + g(u) + k(u, X) (K + T)⁻¹ (y - m(X) - g(X) - ε)` with `g`
    /// a prior feature draw and `ε ~ N(0, T)` the design noise.
    pub fn trajectory(&self, emulator: &GaussianEmulator, seed: u64) -> Result<RffTrajectory> {
        if emulator.kernel() != &self.kernel {
            return Err(Error::input("emulator kernel differs from the sampler's kernel"));
        }
        let mut r = rng::rng(seed);
        let weights = rng::std_normal_vec(&mut r, self.n_features());
        let n = emulator.n_design();
        let update = if n == 0 {
            DVector::zeros(0)
        } else {
            let mean = emulator.mean_fn();
            let resid = DVector::from_iterator(
                n,
                emulator
                    .design_inputs()
                    .iter()
                    .zip(emulator.design_outputs())
                    .zip(emulator.design_noise())
                    .map(|((x, y), t)| {
                        y - mean.eval(x) - self.features.eval(x, &weights) - t.sqrt() * std_normal(&mut r)
                    }),
            );
            emulator.solve_gram(&resid).expect("conditioned emulator")
        };
        Ok(RffTrajectory {
            features: self.features.clone(),
            weights,
            posterior: Some(Posterior {
                emulator: Arc::new(emulator.clone()),
                update,
            }),
        })
    }
}

#[derive(Clone, Debug)]
struct Posterior {
    emulator: Arc<GaussianEmulator>,
    update: DVector<f64>,
}

/// One sampled function; evaluation is deterministic.
#[derive(Clone, Debug)]
pub struct RffTrajectory {
    features: Arc<Features>,
    weights: DVector<f64>,
    posterior: Option<Posterior>,
}

impl RffTrajectory {
    pub fn eval(&self, u: &[f64]) -> f64 {
        let prior = self.features.eval(u, &self.weights);
        match &self.posterior {
            None => prior,
            Some(p) => {
                let em = &p.emulator;
                let corr = if p.update.is_empty() { 0.0 } else { em.cross_vector(u).dot(&p.update) };
                em.mean_fn().eval(u) + prior + corr
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::MeanFn;
    use crate::linalg::sample_moments;

    #[test]
    fn rejects_exponential_and_zero_features() {
        let k = Kernel::exponential(1.0, vec![1.0]).unwrap();
        assert!(matches!(RffSampler::new(&k, 10, 0), Err(Error::Capability(_))));
        let k = Kernel::squared_exponential(1.0, vec![1.0]).unwrap();
        assert!(matches!(RffSampler::new(&k, 0, 0), Err(Error::Capability(_))));
    }

    #[test]
    fn prior_covariance_approximates_kernel() {
        let v = 1.5;
        let k = Kernel::squared_exponential(v, vec![0.5]).unwrap();
        let s = RffSampler::new(&k, 1000, 101).unwrap();
        let pts: Vec<Vec<f64>> = [0.0, 0.2, 0.5, 0.9, 1.6].iter().map(|x| vec![*x]).collect();
        let n = 2000;
        let vals = DMatrix::from_fn(n, 5, |i, j| {
            // One trajectory per row; seeds are independent streams.
            s.prior_trajectory(rng::derive_seed(7, &[i as u64])).eval(&pts[j])
        });
        let (_, cov) = sample_moments(&vals);
        let err = (cov - k.gram(&pts)).abs().max();
        assert!(err < 0.05 * v, "max abs cov error {err}");
    }

    #[test]
    fn trajectory_is_deterministic() {
        let k = Kernel::squared_exponential(1.0, vec![0.3, 0.3]).unwrap();
        let em = GaussianEmulator::condition(
            MeanFn::Constant(0.5),
            k.clone(),
            &DMatrix::from_row_slice(2, 2, &[0.1, 0.1, 0.8, 0.4]),
            &DVector::from_column_slice(&[1.0, -1.0]),
            1e-6,
        )
        .unwrap();
        let s = RffSampler::new(&k, 200, 4).unwrap();
        let a = s.trajectory(&em, 9).unwrap();
        let b = s.trajectory(&em, 9).unwrap();
        assert_eq!(a.eval(&[0.3, 0.7]), b.eval(&[0.3, 0.7]));
    }

    #[test]
    fn posterior_trajectories_interpolate_and_match_mean() {
        let k = Kernel::squared_exponential(1.0, vec![0.25]).unwrap();
        let xs = [0.1, 0.35, 0.6, 0.9];
        let ys = [0.3, -0.5, 0.8, 0.1];
        let tau2 = 1e-8;
        let em = GaussianEmulator::condition(
            MeanFn::Constant(0.0),
            k.clone(),
            &DMatrix::from_column_slice(4, 1, &xs),
            &DVector::from_column_slice(&ys),
            tau2,
        )
        .unwrap();
        let s = RffSampler::new(&k, 1000, 2).unwrap();
        let trajs: Vec<RffTrajectory> = (0..500).map(|i| s.trajectory(&em, 1000 + i).unwrap()).collect();
        for t in trajs.iter().take(20) {
            for (x, y) in xs.iter().zip(&ys) {
                let sd = em.predict(&[*x]).1.sqrt().max(tau2.sqrt());
                assert!((t.eval(&[*x]) - y).abs() < 3.0 * sd.max(1e-3));
            }
        }
        for u in [0.0, 0.22, 0.5, 0.75, 1.1] {
            let (m, v) = em.predict(&[u]);
            let vals: Vec<f64> = trajs.iter().map(|t| t.eval(&[u])).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let se = (v / vals.len() as f64).sqrt();
            assert!((mean - m).abs() < 5.0 * se + 1e-6, "u={u}: {mean} vs {m} (se {se})");
        }
    }

    #[test]
    fn prior_covariance_is_stationary() {
        let k = Kernel::squared_exponential(1.0, vec![0.4]).unwrap();
        let s = RffSampler::new(&k, 1000, 55).unwrap();
        let n = 3000;
        let grid = [0.0, 0.3, 1.0, 1.3];
        let vals = DMatrix::from_fn(n, 4, |i, j| s.prior_trajectory(500 + i as u64).eval(&[grid[j]]));
        let (_, cov) = sample_moments(&vals);
        // Same lag 0.3 at two locations.
        assert!((cov[(0, 1)] - cov[(2, 3)]).abs() < 0.1);
    }
}
