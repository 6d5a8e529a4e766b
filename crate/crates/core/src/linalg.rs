//! Small dense linear-algebra helpers shared by every module.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative jitter ladder: first attempt is jitter-free, then 1e-10 .. 1e-4
/// times the supplied scale, growing by 10x.
pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-4;

/// Condition-number guard for factorization-and-solve routines.
pub const CONDITION_GUARD: f64 = 1e12;

#[derive(Clone, Debug)]
pub struct JitteredCholesky {
    pub chol: Cholesky<f64, Dyn>,
    /// Absolute jitter that was added to the diagonal.
    pub jitter: f64,
}

impl JitteredCholesky {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }
}

/// Cholesky with the escalating jitter policy. `scale` is typically the
/// kernel variance so that jitter is relative to the matrix magnitude.
pub fn cholesky_jitter(mat: &DMatrix<f64>, scale: f64) -> Result<JitteredCholesky> {
    let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    if let Some(chol) = Cholesky::new(mat.clone()) {
        return Ok(JitteredCholesky { chol, jitter: 0.0 });
    }
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * scale;
        let mut m = mat.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok(JitteredCholesky { chol, jitter });
        }
        rel *= 10.0;
    }
    Err(Error::Factorization {
        jitter: JITTER_MAX * scale,
        condition: condition_estimate(mat),
    })
}

/// Ratio of extreme eigenvalue magnitudes of a symmetric matrix.
pub fn condition_estimate(mat: &DMatrix<f64>) -> f64 {
    if mat.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(symmetrize(mat));
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn symmetrize(mat: &DMatrix<f64>) -> DMatrix<f64> {
    (mat + mat.transpose()) * 0.5
}

/// Factor of an SPD matrix, failing if the condition guard is exceeded.
pub fn spd_factor(mat: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(symmetrize(mat))
        .ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))?;
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for i in 0..l.nrows() {
        lo = lo.min(l[(i, i)]);
        hi = hi.max(l[(i, i)]);
    }
    // diag(L)^2 brackets the eigenvalue range loosely; a cheap guard.
    if lo <= 0.0 || (hi / lo).powi(2) > CONDITION_GUARD {
        return Err(Error::Numerical(format!(
            "{what} is ill-conditioned (diag ratio {:.3e})",
            (hi / lo).powi(2)
        )));
    }
    Ok(chol)
}

/// Square root of a symmetric PSD matrix via eigendecomposition.
pub fn sym_sqrt(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(mat));
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Inverse square root of an SPD matrix via eigendecomposition.
pub fn sym_inv_sqrt(mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(mat));
    if eig.eigenvalues.iter().any(|&v| v <= 0.0) {
        return Err(Error::Numerical("matrix is not positive definite".into()));
    }
    let d = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// A matrix `L` with `L Lᵀ = mat` for a symmetric PSD `mat`. Uses jittered
/// Cholesky and falls back to the eigen square root for singular inputs.
pub fn psd_factor(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(mat);
    let scale = (0..sym.nrows()).map(|i| sym[(i, i)]).fold(0.0, f64::max);
    match cholesky_jitter(&sym, scale) {
        Ok(c) => c.l(),
        Err(_) => sym_sqrt(&sym),
    }
}

pub fn min_eigenvalue(mat: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(mat))
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v))
}

/// Neumaier compensated summation.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + compensated_sum(values.iter().map(|v| (v - max).exp())).ln()
}

/// Sample mean and (unbiased) covariance of the rows of `samples`.
pub fn sample_moments(samples: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = samples.nrows();
    let d = samples.ncols();
    let mean = DVector::from_fn(d, |j, _| compensated_sum(samples.column(j).iter().cloned()) / n as f64);
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let r = samples.row(i).transpose() - &mean;
        cov += &r * r.transpose();
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    (mean, cov / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_rescues_singular_matrix() {
        let m = DMatrix::from_element(3, 3, 1.0);
        let c = cholesky_jitter(&m, 1.0).unwrap();
        assert!(c.jitter > 0.0 && c.jitter <= 1e-4);
    }

    #[test]
    fn jitter_gives_up_on_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(cholesky_jitter(&m, 1.0), Err(Error::Factorization { .. })));
    }

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = sym_sqrt(&m);
        assert!((&s * &s - &m).norm() < 1e-12);
        let is = sym_inv_sqrt(&m).unwrap();
        assert!((&is * &m * &is - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let vals = vec![1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(vals), 2.0);
    }

    #[test]
    fn lse_handles_all_neg_inf() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }
}
