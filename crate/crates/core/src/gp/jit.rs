use super::emulator::GaussianEmulator;

/// Joint predictive law of `(f(u), f(u'))` together with the conditional law
/// of `f(u')` given `f(u) = f_u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BivariateLaw {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub cond_mean: f64,
    pub cond_var: f64,
    /// Set when the 2×2 covariance is near-singular.
    pub flagged: bool,
}

/// Relative determinant below which the bivariate covariance counts as
/// near-singular.
const SINGULAR_RTOL: f64 = 1e-10;

/// Bivariate projection of the emulator at `(u, u')` plus the just-in-time
/// conditional of `f(u')` given `f(u) = f_u`.
pub fn jit_bivariate(em: &GaussianEmulator, u: &[f64], f_u: f64, u2: &[f64]) -> BivariateLaw {
    let (m0, v0) = em.predict(u);
    let (m1, v1) = em.predict(u2);
    let c01 = em.posterior_cov(u, u2);
    let det = v0 * v1 - c01 * c01;
    let scale = em.kernel().variance;
    let flagged = !(det > SINGULAR_RTOL * (v0 * v1).max(f64::MIN_POSITIVE));

    let (cond_mean, cond_var) = if v0 <= 1e-14 * scale {
        // f(u) is already pinned; observing it carries no information.
        (m1, v1)
    } else {
        let gain = c01 / v0;
        (m1 + gain * (f_u - m0), (v1 - gain * c01).max(0.0))
    };

    BivariateLaw {
        mean: [m0, m1],
        cov: [[v0, c01], [c01, v1]],
        cond_mean,
        cond_var,
        flagged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{Kernel, MeanFn};
    use nalgebra::{DMatrix, DVector};

    fn toy() -> GaussianEmulator {
        GaussianEmulator::condition(
            MeanFn::Constant(0.2),
            Kernel::squared_exponential(1.3, vec![0.4]).unwrap(),
            &DMatrix::from_column_slice(2, 1, &[0.1, 0.8]),
            &DVector::from_column_slice(&[0.7, -0.3]),
            1e-6,
        )
        .unwrap()
    }

    #[test]
    fn duplicate_point_is_a_point_mass() {
        let em = toy();
        let law = jit_bivariate(&em, &[0.4], 1.7, &[0.4]);
        assert!(law.cond_var < 1e-10);
        assert!((law.cond_mean - 1.7).abs() < 1e-8);
        assert!(law.flagged);
    }

    #[test]
    fn far_point_reverts_to_marginal() {
        let em = toy();
        let law = jit_bivariate(&em, &[0.4], 5.0, &[0.4 + 20.0 * 0.4 + 1.0]);
        assert!((law.cond_mean - 0.2).abs() < 1e-10);
        assert!((law.cond_var - 1.3).abs() < 1e-10);
    }

    #[test]
    fn matches_appending_the_point() {
        let em = toy();
        let (u, fu, u2) = ([0.45], 0.9, [0.6]);
        let law = jit_bivariate(&em, &u, fu, &u2);
        let direct = em.with_point(&u, fu).unwrap();
        let (m, v) = direct.predict(&u2);
        assert!((law.cond_mean - m).abs() < 1e-8);
        assert!((law.cond_var - v).abs() < 1e-8);
    }

    #[test]
    fn matches_dense_four_by_four_conditioning() {
        // Joint over (design 0, design 1, u, u') with noisy design outputs.
        let k = Kernel::squared_exponential(1.3, vec![0.4]).unwrap();
        let (c, tau2) = (0.2, 1e-6);
        let pts = [0.1, 0.8, 0.35, 0.55];
        let ys = [0.7, -0.3];
        let em = toy();
        let law = jit_bivariate(&em, &[pts[2]], 0.0, &[pts[3]]);
        let mut joint = DMatrix::from_fn(4, 4, |i, j| k.k(&[pts[i]], &[pts[j]]));
        joint[(0, 0)] += tau2;
        joint[(1, 1)] += tau2;
        let a = joint.view((0, 0), (2, 2)).into_owned();
        let b = joint.view((0, 2), (2, 2)).into_owned();
        let d = joint.view((2, 2), (2, 2)).into_owned();
        let ainv = a.try_inverse().unwrap();
        let r = DVector::from_column_slice(&[ys[0] - c, ys[1] - c]);
        let mean = DVector::from_element(2, c) + b.transpose() * &ainv * r;
        let cov = d - b.transpose() * &ainv * &b;
        for i in 0..2 {
            assert!((law.mean[i] - mean[i]).abs() < 1e-8);
            for j in 0..2 {
                assert!((law.cov[i][j] - cov[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn composed_twice_matches_trivariate() {
        let em = toy();
        let (u, u1, u2) = ([0.3], [0.5], [0.65]);
        let (fu, fu1) = (0.4, -0.1);
        // Step 1: u -> u1 conditional; step 2 conditions on both.
        let first = jit_bivariate(&em, &u, fu, &u1);
        assert!(first.cond_var > 0.0);
        let second = jit_bivariate(&em.with_point(&u, fu).unwrap(), &u1, fu1, &u2);
        // One-shot: condition on (u, fu) and (u1, fu1) jointly.
        let (m, cov) = em.predict_joint(&[u.to_vec(), u1.to_vec(), u2.to_vec()]);
        let a = cov.view((0, 0), (2, 2)).into_owned();
        let b = cov.view((0, 2), (2, 1)).into_owned();
        let ainv = a.try_inverse().unwrap();
        let r = DVector::from_column_slice(&[fu - m[0], fu1 - m[1]]);
        let cm = m[2] + (b.transpose() * &ainv * r)[0];
        let cv = cov[(2, 2)] - (b.transpose() * &ainv * &b)[0];
        assert!((second.cond_mean - cm).abs() < 1e-6, "{} vs {cm}", second.cond_mean);
        assert!((second.cond_var - cv).abs() < 1e-6);
    }
}
