use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{psd_factor, symmetrize};
use crate::linear_gaussian::{LinearGaussianProblem, LinearSurrogate};
use crate::rng::{self, std_normal_vec};

/// One-dimensional deconvolution: blur a signal with a Gaussian kernel and
/// observe every `stride`-th blurred value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeconvolutionSpec {
    pub dim: usize,
    pub stride: usize,
    /// Standard deviation of the blur kernel, in grid units.
    pub conv_width: f64,
    pub sigma: f64,
    /// Lengthscale of the Gaussian prior kernel, in grid units.
    pub prior_lengthscale: f64,
    pub prior_variance: f64,
}

impl Default for DeconvolutionSpec {
    fn default() -> Self {
        Self {
            dim: 100,
            stride: 4,
            conv_width: 3.0,
            sigma: 0.2,
            prior_lengthscale: 10.0,
            prior_variance: 1.0,
        }
    }
}

impl DeconvolutionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.stride == 0 || self.stride > self.dim {
            return Err(Error::input("deconvolution needs dim >= stride >= 1"));
        }
        for (name, v) in [
            ("conv_width", self.conv_width),
            ("sigma", self.sigma),
            ("prior_lengthscale", self.prior_lengthscale),
            ("prior_variance", self.prior_variance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::input(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn n_obs(&self) -> usize {
        self.dim.div_ceil(self.stride)
    }

    /// Row-normalized discrete Gaussian convolution matrix (D×D).
    pub fn convolution(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut k = DMatrix::from_fn(d, d, |i, j| {
            let t = i as f64 - j as f64;
            (-0.5 * t * t / (self.conv_width * self.conv_width)).exp()
        });
        for i in 0..d {
            let s: f64 = k.row(i).sum();
            k.row_mut(i).scale_mut(1.0 / s);
        }
        k
    }

    /// Forward operator `G = S K` with `S` selecting rows 0, stride, 2·stride, ...
    pub fn forward_operator(&self) -> DMatrix<f64> {
        let k = self.convolution();
        let p = self.n_obs();
        DMatrix::from_fn(p, self.dim, |r, j| k[(r * self.stride, j)])
    }

    pub fn prior_cov(&self) -> DMatrix<f64> {
        let l = self.prior_lengthscale;
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            let t = i as f64 - j as f64;
            self.prior_variance * (-0.5 * t * t / (l * l)).exp()
        })
    }
}

/// A sampled deconvolution instance plus the surrogate-bias law `N(0, Q)`
/// with `Q = G C₀ Gᵀ`.
#[derive(Clone, Debug)]
pub struct DeconvolutionInstance {
    pub spec: DeconvolutionSpec,
    pub seed: u64,
    pub problem: LinearGaussianProblem,
    pub u_true: DVector<f64>,
    pub q: DMatrix<f64>,
    prior_factor: DMatrix<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DeconvolutionRecord {
    pub spec: DeconvolutionSpec,
    pub seed: u64,
    pub u_true: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn build_deconvolution(spec: &DeconvolutionSpec, seed: u64) -> Result<DeconvolutionInstance> {
    spec.validate()?;
    let g = spec.forward_operator();
    let c0 = spec.prior_cov();
    let factor = psd_factor(&c0);
    let mut r = rng::rng(seed);
    let u_true = &factor * std_normal_vec(&mut r, spec.dim);
    let p = spec.n_obs();
    let y = &g * &u_true + std_normal_vec(&mut r, p) * spec.sigma;
    let q = symmetrize(&(&g * &c0 * g.transpose()));
    let problem = LinearGaussianProblem::new(
        g,
        DMatrix::identity(p, p) * (spec.sigma * spec.sigma),
        DVector::zeros(spec.dim),
        c0,
        y,
    )?;
    Ok(DeconvolutionInstance {
        spec: spec.clone(),
        seed,
        problem,
        u_true,
        q,
        prior_factor: factor,
    })
}

impl DeconvolutionInstance {
    /// A biased but calibrated surrogate: `r ~ N(0, Q)` drawn as `G ξ` with
    /// `ξ ~ N(0, C₀)`, so no factorization of `Q` is needed.
    pub fn surrogate(&self, seed: u64) -> Result<LinearSurrogate> {
        let mut r = rng::rng(seed);
        let xi = &self.prior_factor * std_normal_vec(&mut r, self.spec.dim);
        LinearSurrogate::new(&self.problem.g * xi, self.q.clone())
    }

    /// `L` with `L Lᵀ = C₀` (used for whitened sampling coordinates).
    pub fn prior_factor(&self) -> &DMatrix<f64> {
        &self.prior_factor
    }

    pub fn record(&self) -> DeconvolutionRecord {
        DeconvolutionRecord {
            spec: self.spec.clone(),
            seed: self.seed,
            u_true: self.u_true.iter().copied().collect(),
            y: self.problem.y.iter().copied().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;

    #[test]
    fn operator_structure() {
        let spec = DeconvolutionSpec::default();
        let g = spec.forward_operator();
        assert_eq!(g.shape(), (25, 100));
        let k = spec.convolution();
        for r in 0..25 {
            assert_eq!(g.row(r), k.row(4 * r));
        }
        let ones = DVector::from_element(100, 2.5);
        assert!((&g * ones).iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn bias_covariance_is_psd_and_linear() {
        let inst = build_deconvolution(&DeconvolutionSpec::default(), 4).unwrap();
        assert!(min_eigenvalue(&inst.q) >= -1e-10);
        let g = &inst.problem.g;
        let mut r = rng::rng(1);
        let a = std_normal_vec(&mut r, 100);
        let b = std_normal_vec(&mut r, 100);
        let lhs = g * (&a * 2.0 + &b * -0.5);
        let rhs = g * &a * 2.0 - g * &b * 0.5;
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn seed_determinism() {
        let s = DeconvolutionSpec::default();
        let a = build_deconvolution(&s, 9).unwrap();
        let b = build_deconvolution(&s, 9).unwrap();
        assert_eq!(a.u_true, b.u_true);
        assert_eq!(a.problem.y, b.problem.y);
        assert_eq!(a.surrogate(3).unwrap().r, b.surrogate(3).unwrap().r);
    }
}
