//! Closed-form linear-Gaussian inverse problems with an additive Gaussian
//! surrogate bias: exact, EP and EUP moments, and their spectral form.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spd_factor, symmetrize};

/// `y = G u + e`, `e ~ N(0, Σ)`, `u ~ N(m₀, C₀)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianProblem {
    pub g: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub m0: DVector<f64>,
    pub c0: DMatrix<f64>,
    pub y: DVector<f64>,
}

/// Surrogate `f̂(u) ~ N(G u + r, Q)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSurrogate {
    pub r: DVector<f64>,
    pub q: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_square(m: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::input(format!(
            "{what} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

impl LinearGaussianProblem {
    pub fn new(
        g: DMatrix<f64>,
        sigma: DMatrix<f64>,
        m0: DVector<f64>,
        c0: DMatrix<f64>,
        y: DVector<f64>,
    ) -> Result<Self> {
        let (p, d) = g.shape();
        check_square(&sigma, p, "noise covariance")?;
        check_square(&c0, d, "prior covariance")?;
        if m0.len() != d {
            return Err(Error::Dimension { expected: d, got: m0.len() });
        }
        if y.len() != p {
            return Err(Error::Dimension { expected: p, got: y.len() });
        }
        Ok(Self { g, sigma, m0, c0, y })
    }

    pub fn dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn n_obs(&self) -> usize {
        self.g.nrows()
    }

    /// Gain `A = C Gᵀ Σ⁻¹`, computed as `C₀ Gᵀ (G C₀ Gᵀ + Σ)⁻¹`.
    pub fn gain(&self) -> Result<DMatrix<f64>> {
        let s = symmetrize(&(&self.g * &self.c0 * self.g.transpose() + &self.sigma));
        let chol = spd_factor(&s, "G C0 G^T + Sigma")?;
        let gc0 = &self.g * &self.c0;
        Ok(chol.solve(&gc0).transpose())
    }
}

impl LinearSurrogate {
    pub fn new(r: DVector<f64>, q: DMatrix<f64>) -> Result<Self> {
        check_square(&q, r.len(), "surrogate covariance")?;
        Ok(Self { r, q })
    }

    pub fn zero(p: usize) -> Self {
        Self {
            r: DVector::zeros(p),
            q: DMatrix::zeros(p, p),
        }
    }

    fn check(&self, prob: &LinearGaussianProblem) -> Result<()> {
        if self.r.len() != prob.n_obs() {
            return Err(Error::Dimension {
                expected: prob.n_obs(),
                got: self.r.len(),
            });
        }
        Ok(())
    }
}

/// Exact posterior `N(m, C)`. Computed in the observation-space form
/// `C = C₀ - A G C₀`, `m = m₀ + A (y - G m₀)`, which equals
/// `(GᵀΣ⁻¹G + C₀⁻¹)⁻¹` and its mean without inverting `C₀`.
pub fn exact_posterior(prob: &LinearGaussianProblem) -> Result<GaussianMoments> {
    let a = prob.gain()?;
    let mean = &prob.m0 + &a * (&prob.y - &prob.g * &prob.m0);
    let cov = symmetrize(&(&prob.c0 - &a * &prob.g * &prob.c0));
    Ok(GaussianMoments { mean, cov })
}

/// Plug-in mean approximation: the exact posterior of the problem whose
/// forward map is the surrogate mean `G u + r`, i.e. data `y − r`.
pub fn plugin_moments(prob: &LinearGaussianProblem, sur: &LinearSurrogate) -> Result<GaussianMoments> {
    sur.check(prob)?;
    let shifted = LinearGaussianProblem {
        y: &prob.y - &sur.r,
        ..prob.clone()
    };
    exact_posterior(&shifted)
}

/// Expected posterior: `m - A r`, `C + A Q Aᵀ`.
pub fn ep_moments(prob: &LinearGaussianProblem, sur: &LinearSurrogate) -> Result<GaussianMoments> {
    sur.check(prob)?;
    let exact = exact_posterior(prob)?;
    let a = prob.gain()?;
    Ok(GaussianMoments {
        mean: exact.mean - &a * &sur.r,
        cov: symmetrize(&(exact.cov + &a * &sur.q * a.transpose())),
    })
}

/// Expected unnormalized posterior: the exact posterior of the problem with
/// noise `Σ + Q` and data `y - r`.
pub fn eup_moments(prob: &LinearGaussianProblem, sur: &LinearSurrogate) -> Result<GaussianMoments> {
    sur.check(prob)?;
    let shifted = LinearGaussianProblem {
        sigma: &prob.sigma + &sur.q,
        y: &prob.y - &sur.r,
        ..prob.clone()
    };
    exact_posterior(&shifted)
}

/// Inputs to the spectral analysis with `Σ = σ²I`, `C₀ = c₀²I`, `Q = q²I`.
#[derive(Clone, Debug)]
pub struct IsotropicSetup {
    pub g: DMatrix<f64>,
    pub sigma: f64,
    pub c0: f64,
    pub q: f64,
    pub m0: DVector<f64>,
    pub y: DVector<f64>,
    pub r: DVector<f64>,
}

impl IsotropicSetup {
    pub fn problem(&self) -> LinearGaussianProblem {
        let (p, d) = self.g.shape();
        LinearGaussianProblem {
            g: self.g.clone(),
            sigma: DMatrix::identity(p, p) * self.sigma.powi(2),
            m0: self.m0.clone(),
            c0: DMatrix::identity(d, d) * self.c0.powi(2),
            y: self.y.clone(),
        }
    }

    pub fn surrogate(&self) -> LinearSurrogate {
        let p = self.g.nrows();
        LinearSurrogate {
            r: self.r.clone(),
            q: DMatrix::identity(p, p) * self.q.powi(2),
        }
    }
}

/// Per-mode spectral record. The `lambda_ep` and `alpha_*` columns follow
/// the closed-form expressions as stated; the `*_dense` columns are the
/// same quantities read off the dense EP/EUP moments in the `V` basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeRecord {
    pub j: usize,
    pub s: f64,
    pub lambda: f64,
    pub lambda_eup: f64,
    pub lambda_ep: f64,
    pub alpha: f64,
    pub alpha_eup: f64,
    pub alpha_ep: f64,
    pub lambda_ep_dense: f64,
    pub alpha_eup_dense: f64,
    pub alpha_ep_dense: f64,
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    pub modes: Vec<ModeRecord>,
    /// Right singular vectors as columns, completed to a full `D×D` basis.
    pub v: DMatrix<f64>,
}

/// Singular values below this fraction of the largest count as zero.
pub const SINGULAR_RTOL: f64 = 1e-12;

pub fn svd_spectrum(setup: &IsotropicSetup) -> Result<Spectrum> {
    let (p, d) = setup.g.shape();
    if setup.y.len() != p || setup.r.len() != p || setup.m0.len() != d {
        return Err(Error::input("spectral setup dimensions are inconsistent"));
    }
    if !(setup.sigma > 0.0 && setup.c0 > 0.0 && setup.q >= 0.0) {
        return Err(Error::input("need sigma > 0, c0 > 0, q >= 0"));
    }
    // Full right basis from the eigendecomposition of GᵀG.
    let eig = SymmetricEigen::new(setup.g.transpose() * &setup.g);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let v = DMatrix::from_fn(d, d, |i, j| eig.eigenvectors[(i, order[j])]);
    let s_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max).sqrt();

    let (s2, c2, q2) = (setup.sigma.powi(2), setup.c0.powi(2), setup.q.powi(2));
    // s_j <y, u_j> = <Gᵀ y, v_j>, which stays stable for tiny s_j.
    let gty = setup.g.transpose() * &setup.y;
    let gtr = setup.g.transpose() * &setup.r;

    let modes = (0..d)
        .map(|j| {
            let vj = v.column(j);
            let s_raw = eig.eigenvalues[order[j]].max(0.0).sqrt();
            let s = if s_raw <= SINGULAR_RTOL * s_max { 0.0 } else { s_raw };
            let (sy, sr) = if s == 0.0 { (0.0, 0.0) } else { (gty.dot(&vj), gtr.dot(&vj)) };
            let m0v = setup.m0.dot(&vj);

            let lambda = c2 / (1.0 + c2 * s * s / s2);
            let lambda_eup = c2 / (1.0 + c2 * s * s / (s2 + q2));
            let lambda_ep = lambda + q2 * s * s * c2 * c2 / (s2 * s2);
            let alpha = lambda * sy / s2 + lambda / c2 * m0v;
            let alpha_eup = lambda * (sy - sr) / (s2 + q2) + lambda / c2 * m0v;
            let alpha_ep = alpha - c2 * sr / s2;

            let lambda_ep_dense = lambda + q2 * s * s * lambda * lambda / (s2 * s2);
            let alpha_eup_dense = lambda_eup * (sy - sr) / (s2 + q2) + lambda_eup / c2 * m0v;
            let alpha_ep_dense = alpha - lambda * sr / s2;
            ModeRecord {
                j,
                s,
                lambda,
                lambda_eup,
                lambda_ep,
                alpha,
                alpha_eup,
                alpha_ep,
                lambda_ep_dense,
                alpha_eup_dense,
                alpha_ep_dense,
            }
        })
        .collect();
    Ok(Spectrum { modes, v })
}

/// Spectral records for a single mode with singular value `s`, for sweeps.
pub fn mode_eigenvalues(s: f64, sigma: f64, c0: f64, q: f64) -> (f64, f64, f64) {
    let (s2, c2, q2) = (sigma * sigma, c0 * c0, q * q);
    let lambda = c2 / (1.0 + c2 * s * s / s2);
    let lambda_eup = c2 / (1.0 + c2 * s * s / (s2 + q2));
    let lambda_ep = lambda + q2 * s * s * c2 * c2 / (s2 * s2);
    (lambda, lambda_eup, lambda_ep)
}

pub fn write_spectrum_csv(path: &Path, modes: &[ModeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    for m in modes {
        w.serialize(m).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_moments_json(path: &Path, moments: &GaussianMoments) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(moments.to_json()?.as_bytes()).map_err(|e| Error::io(path, e))
}

/// The linear-Gaussian problem in reduced whitened coordinates, for MCMC.
///
/// `u = m₀ + L z` with `L` the leading eigen-factor of `C₀` (eigenvalues
/// below `rel_tol · λ_max` dropped), so `z ~ N(0, I_k)` a priori. Residuals
/// are whitened by `Σ`: with `W = chol(Σ)⁻¹`, trajectory `f(u) = G u + r + ξ`
/// gives `log π(z; ξ) = −½|z|² − ½|b − B z − W ξ|² + const`, where
/// `B = W G L` and `b = W (y − G m₀ − r)`.
#[derive(Clone, Debug)]
pub struct ReducedLinearModel {
    pub basis: DMatrix<f64>,
    pub m0: DVector<f64>,
    pub b_mat: DMatrix<f64>,
    pub b_vec: DVector<f64>,
    /// Factor of the whitened bias covariance `W Q Wᵀ`.
    pub bias_factor: DMatrix<f64>,
}

impl ReducedLinearModel {
    pub fn new(prob: &LinearGaussianProblem, sur: &LinearSurrogate, rel_tol: f64) -> Result<Self> {
        sur.check(prob)?;
        let eig = SymmetricEigen::new(symmetrize(&prob.c0));
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..eig.eigenvalues.len())
            .filter(|&i| eig.eigenvalues[i] > rel_tol * top)
            .collect();
        if keep.is_empty() {
            return Err(Error::DegenerateDensity("prior covariance has no positive eigenvalues".into()));
        }
        let d = prob.dim();
        let basis = DMatrix::from_fn(d, keep.len(), |r, c| {
            eig.eigenvectors[(r, keep[c])] * eig.eigenvalues[keep[c]].sqrt()
        });
        let ls = spd_factor(&prob.sigma, "noise covariance")?.l();
        let w = |m: &DMatrix<f64>| ls.solve_lower_triangular(m).expect("positive diagonal");
        let b_mat = w(&(&prob.g * &basis));
        let resid = &prob.y - &prob.g * &prob.m0 - &sur.r;
        let b_vec = w(&DMatrix::from_column_slice(resid.len(), 1, resid.as_slice())).column(0).into_owned();
        let bias_factor = w(&crate::linalg::psd_factor(&sur.q));
        Ok(Self {
            basis,
            m0: prob.m0.clone(),
            b_mat,
            b_vec,
            bias_factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `log π(z; ξ_w)` up to a constant, with `ξ_w = W ξ` the whitened bias.
    pub fn log_density(&self, z: &[f64], xi_w: &DVector<f64>) -> f64 {
        let zv = DVector::from_column_slice(z);
        let r = &self.b_vec - &self.b_mat * &zv - xi_w;
        -0.5 * (zv.norm_squared() + r.norm_squared())
    }

    /// Factor of the per-trajectory posterior covariance `(I + BᵀB)⁻¹` of `z`.
    pub fn posterior_factor(&self) -> Result<DMatrix<f64>> {
        let k = self.dim();
        let prec = DMatrix::identity(k, k) + self.b_mat.transpose() * &self.b_mat;
        let inv = spd_factor(&prec, "reduced precision")?.inverse();
        Ok(spd_factor(&inv, "reduced covariance")?.l())
    }

    /// Map rows of reduced samples back to `u`.
    pub fn to_u(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let u = z * self.basis.transpose();
        DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] + self.m0[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;

    fn random_problem(p: usize, d: usize, seed: u64) -> (LinearGaussianProblem, LinearSurrogate) {
        let mut r = rng::rng(seed);
        let g = DMatrix::from_fn(p, d, |_, _| rng::std_normal(&mut r));
        let a = DMatrix::from_fn(p, p, |_, _| rng::std_normal(&mut r));
        let sigma = &a * a.transpose() * 0.1 + DMatrix::identity(p, p) * 0.2;
        let b = DMatrix::from_fn(d, d, |_, _| rng::std_normal(&mut r));
        let c0 = &b * b.transpose() * 0.2 + DMatrix::identity(d, d);
        let m0 = rng::std_normal_vec(&mut r, d);
        let y = rng::std_normal_vec(&mut r, p);
        let qa = DMatrix::from_fn(p, p, |_, _| rng::std_normal(&mut r));
        let q = &qa * qa.transpose() * 0.3;
        let rr = rng::std_normal_vec(&mut r, p);
        (
            LinearGaussianProblem::new(g, sigma, m0, c0, y).unwrap(),
            LinearSurrogate::new(rr, q).unwrap(),
        )
    }

    #[test]
    fn uninformative_operator_returns_prior() {
        let (mut prob, _) = random_problem(3, 4, 1);
        prob.g = DMatrix::zeros(3, 4);
        let post = exact_posterior(&prob).unwrap();
        assert_relative_eq!(post.mean, prob.m0, epsilon = 1e-14);
        assert_relative_eq!(post.cov, prob.c0, epsilon = 1e-14);
    }

    #[test]
    fn scalar_case_by_hand() {
        let y = 0.8;
        let prob = LinearGaussianProblem::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, y),
        )
        .unwrap();
        let post = exact_posterior(&prob).unwrap();
        assert!((post.cov[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((post.mean[0] - y / 2.0).abs() < 1e-15);
    }

    #[test]
    fn precision_form_residual() {
        let (prob, _) = random_problem(5, 3, 2);
        let post = exact_posterior(&prob).unwrap();
        let sinv = prob.sigma.clone().try_inverse().unwrap();
        let c0inv = prob.c0.clone().try_inverse().unwrap();
        let prec = prob.g.transpose() * &sinv * &prob.g + &c0inv;
        let rhs = prob.g.transpose() * &sinv * &prob.y + &c0inv * &prob.m0;
        let resid = (prec.clone() * &post.mean - &rhs).norm();
        assert!(resid < 1e-10, "{resid}");
        assert!((prec * &post.cov - DMatrix::identity(3, 3)).norm() < 1e-10);
    }

    #[test]
    fn ep_limits() {
        let (prob, sur) = random_problem(4, 3, 3);
        let exact = exact_posterior(&prob).unwrap();
        let ep0 = ep_moments(&prob, &LinearSurrogate::zero(4)).unwrap();
        assert_relative_eq!(ep0.mean, exact.mean, epsilon = 1e-12);
        assert_relative_eq!(ep0.cov, exact.cov, epsilon = 1e-12);
        let bias_only = LinearSurrogate::new(sur.r.clone(), DMatrix::zeros(4, 4)).unwrap();
        let ep = ep_moments(&prob, &bias_only).unwrap();
        assert_relative_eq!(ep.cov, exact.cov, epsilon = 1e-12);
        let a = prob.gain().unwrap();
        assert_relative_eq!(ep.mean, &exact.mean - a * &sur.r, epsilon = 1e-12);
    }

    #[test]
    fn gain_matches_precision_form() {
        let (prob, _) = random_problem(4, 3, 4);
        let c = exact_posterior(&prob).unwrap().cov;
        let want = c * prob.g.transpose() * prob.sigma.clone().try_inverse().unwrap();
        assert_relative_eq!(prob.gain().unwrap(), want, epsilon = 1e-10);
    }

    #[test]
    fn ep_matches_mixture_monte_carlo() {
        let (prob, sur) = random_problem(3, 2, 5);
        let ep = ep_moments(&prob, &sur).unwrap();
        let exact = exact_posterior(&prob).unwrap();
        let lq = crate::linalg::psd_factor(&sur.q);
        let mut r = rng::rng(55);
        let n = 10_000;
        let a = prob.gain().unwrap();
        let mut means = DMatrix::zeros(n, 2);
        for i in 0..n {
            let shift = &sur.r + &lq * rng::std_normal_vec(&mut r, 3);
            let shifted = LinearGaussianProblem {
                y: &prob.y - &shift,
                ..prob.clone()
            };
            let m = exact_posterior(&shifted).unwrap().mean;
            means.set_row(i, &m.transpose());
        }
        let (mbar, mcov) = crate::linalg::sample_moments(&means);
        // Mixture of N(m_i, C): mean = E m_i, cov = C + Cov(m_i).
        for k in 0..2 {
            let se = (mcov[(k, k)] / n as f64).sqrt();
            assert!((mbar[k] - ep.mean[k]).abs() < 3.0 * se, "mean {k}");
        }
        let mix_cov = &exact.cov + &mcov;
        let want = &exact.cov + &a * &sur.q * a.transpose();
        for k in 0..2 {
            // Sample-variance standard error for a Gaussian coordinate.
            let se = mcov[(k, k)] * (2.0 / n as f64).sqrt();
            assert!((mix_cov[(k, k)] - want[(k, k)]).abs() < 3.0 * se);
        }
        assert_relative_eq!(ep.cov, want, epsilon = 1e-12);
    }

    #[test]
    fn eup_limits() {
        let (prob, _) = random_problem(4, 3, 6);
        let exact = exact_posterior(&prob).unwrap();
        let eup0 = eup_moments(&prob, &LinearSurrogate::zero(4)).unwrap();
        assert_relative_eq!(eup0.mean, exact.mean, epsilon = 1e-12);
        // Huge isotropic Q: back to the prior.
        let sigma_scale = prob.sigma.diagonal().max().sqrt();
        let q = (1e6 * sigma_scale).powi(2);
        let huge = LinearSurrogate::new(DVector::zeros(4), DMatrix::identity(4, 4) * q).unwrap();
        let eup = eup_moments(&prob, &huge).unwrap();
        assert!((&eup.mean - &prob.m0).norm() / prob.m0.norm() < 1e-4);
        assert!((&eup.cov - &prob.c0).norm() / prob.c0.norm() < 1e-4);
    }

    #[test]
    fn ep_cov_dominates_exact() {
        for seed in 0..10 {
            let (prob, sur) = random_problem(4, 5, 100 + seed);
            let d = ep_moments(&prob, &sur).unwrap().cov - exact_posterior(&prob).unwrap().cov;
            assert!(crate::linalg::min_eigenvalue(&d) >= -1e-10);
        }
    }

    #[test]
    fn ep_mean_ignores_q() {
        let (prob, sur) = random_problem(4, 3, 8);
        let scaled = LinearSurrogate::new(sur.r.clone(), &sur.q * 100.0).unwrap();
        let a = ep_moments(&prob, &sur).unwrap().mean;
        let b = ep_moments(&prob, &scaled).unwrap().mean;
        assert!((a - b).norm() < 1e-12);
    }

    fn unit_setup(q: f64) -> IsotropicSetup {
        IsotropicSetup {
            g: DMatrix::identity(1, 1),
            sigma: 1.0,
            c0: 1.0,
            q,
            m0: DVector::zeros(1),
            y: DVector::from_element(1, 0.3),
            r: DVector::zeros(1),
        }
    }

    #[test]
    fn unit_mode_values() {
        let sp = svd_spectrum(&unit_setup(1.0)).unwrap();
        let m = &sp.modes[0];
        assert!((m.lambda - 0.5).abs() < 1e-12);
        assert!((m.lambda_eup - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.lambda_ep - 1.5).abs() < 1e-12);
    }

    #[test]
    fn blind_directions_keep_prior_variance() {
        let setup = IsotropicSetup {
            g: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            sigma: 0.5,
            c0: 1.3,
            q: 0.7,
            m0: DVector::from_column_slice(&[0.1, -0.4]),
            y: DVector::from_element(1, 0.2),
            r: DVector::from_element(1, 0.05),
        };
        let sp = svd_spectrum(&setup).unwrap();
        let blind = &sp.modes[1];
        assert_eq!(blind.s, 0.0);
        for l in [blind.lambda, blind.lambda_eup, blind.lambda_ep] {
            assert!((l - 1.69).abs() < 1e-12);
        }
    }

    #[test]
    fn no_surrogate_noise_collapses() {
        let mut setup = unit_setup(0.0);
        setup.g = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, 0.2, 1.0, 0.3]);
        setup.y = DVector::from_column_slice(&[0.4, -0.2]);
        setup.r = DVector::zeros(2);
        setup.m0 = DVector::from_column_slice(&[0.1, 0.2, 0.3]);
        for m in svd_spectrum(&setup).unwrap().modes {
            assert!((m.lambda - m.lambda_eup).abs() < 1e-14 && (m.lambda - m.lambda_ep).abs() < 1e-14);
            assert!((m.alpha - m.alpha_eup).abs() < 1e-14 && (m.alpha - m.alpha_ep).abs() < 1e-14);
        }
    }

    fn random_isotropic(seed: u64) -> IsotropicSetup {
        let mut r = rng::rng(seed);
        let (p, d) = (4, 6);
        IsotropicSetup {
            g: DMatrix::from_fn(p, d, |_, _| rng::std_normal(&mut r)),
            sigma: 0.3 + r.random_range(0.0..1.0),
            c0: 0.5 + r.random_range(0.0..1.0),
            q: r.random_range(0.0..2.0),
            m0: rng::std_normal_vec(&mut r, d),
            y: rng::std_normal_vec(&mut r, p),
            r: rng::std_normal_vec(&mut r, p),
        }
    }
    use rand::Rng;

    #[test]
    fn spectrum_diagonalizes_dense_moments() {
        for seed in 0..5 {
            let setup = random_isotropic(seed);
            let sp = svd_spectrum(&setup).unwrap();
            let (prob, sur) = (setup.problem(), setup.surrogate());
            let exact = exact_posterior(&prob).unwrap();
            let ep = ep_moments(&prob, &sur).unwrap();
            let eup = eup_moments(&prob, &sur).unwrap();
            let vt = sp.v.transpose();
            let dc = &vt * &exact.cov * &sp.v;
            let dep = &vt * &ep.cov * &sp.v;
            let deup = &vt * &eup.cov * &sp.v;
            let (am, aep, aeup) = (&vt * &exact.mean, &vt * &ep.mean, &vt * &eup.mean);
            for (j, m) in sp.modes.iter().enumerate() {
                assert!((dc[(j, j)] - m.lambda).abs() < 1e-8);
                assert!((deup[(j, j)] - m.lambda_eup).abs() < 1e-8);
                assert!((dep[(j, j)] - m.lambda_ep_dense).abs() < 1e-8);
                assert!((am[j] - m.alpha).abs() < 1e-8);
                assert!((aeup[j] - m.alpha_eup_dense).abs() < 1e-8);
                assert!((aep[j] - m.alpha_ep_dense).abs() < 1e-8);
            }
            let off = |m: &DMatrix<f64>| {
                let mut x = m.clone();
                x.fill_diagonal(0.0);
                x.abs().max()
            };
            assert!(off(&dc) < 1e-8 && off(&dep) < 1e-8 && off(&deup) < 1e-8);
            let recon: DVector<f64> = &sp.v * DVector::from_iterator(6, sp.modes.iter().map(|m| m.alpha));
            assert!((recon - exact.mean).norm() < 1e-8);
        }
    }

    #[test]
    fn q_sweep_monotone() {
        let c0 = 1.0;
        let mut prev = (0.0, 0.0);
        for i in 0..40 {
            let q = 0.05 * 1.3f64.powi(i);
            let (l, le, lp) = mode_eigenvalues(1.0, 1.0, c0, q);
            let (re, rp) = (le / l, lp / l);
            assert!(re > prev.0 && rp > prev.1);
            assert!(le <= c0 * c0);
            prev = (re, rp);
        }
        assert!(prev.1 > 1e6);
    }

    #[test]
    fn plugin_shares_ep_mean_and_exact_cov() {
        let (prob, sur) = random_problem(4, 3, 21);
        let pm = plugin_moments(&prob, &sur).unwrap();
        let ep = ep_moments(&prob, &sur).unwrap();
        let ex = exact_posterior(&prob).unwrap();
        assert!((&pm.mean - &ep.mean).norm() < 1e-10);
        assert!((&pm.cov - &ex.cov).norm() < 1e-10);
    }

    #[test]
    fn reduced_model_reproduces_trajectory_posterior() {
        // For a fixed bias draw ξ the reduced model's Gaussian in z maps to
        // the exact posterior of the problem with data y − r − ξ.
        let (prob, sur) = random_problem(4, 3, 22);
        let model = ReducedLinearModel::new(&prob, &sur, 1e-10).unwrap();
        assert_eq!(model.dim(), 3);
        let xi = DVector::from_column_slice(&[0.3, -0.2, 0.5, 0.1]);
        let ls = spd_factor(&prob.sigma, "s").unwrap().l();
        let xi_w = ls.solve_lower_triangular(&xi).unwrap();
        let pf = model.posterior_factor().unwrap();
        let cz = &pf * pf.transpose();
        let zm = &cz * model.b_mat.transpose() * (&model.b_vec - &xi_w);
        let u_mean = model.to_u(&DMatrix::from_row_slice(1, 3, zm.as_slice())).row(0).transpose();
        let u_cov = &model.basis * &cz * model.basis.transpose();
        let shifted = LinearGaussianProblem {
            y: &prob.y - &sur.r - &xi,
            ..prob.clone()
        };
        let ex = exact_posterior(&shifted).unwrap();
        assert!((u_mean - &ex.mean).norm() < 1e-9);
        assert!((u_cov - &ex.cov).norm() < 1e-9);
        // The log density is maximized at the posterior mean in z.
        let at = model.log_density(zm.as_slice(), &xi_w);
        let off: Vec<f64> = zm.iter().map(|v| v + 0.01).collect();
        assert!(model.log_density(&off, &xi_w) < at);
    }
}
