use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kernel::{rows_of, Kernel, KernelFamily};
use super::PointwiseSurrogate;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jitter, JitteredCholesky};
use crate::stats::LN_2PI;

/// Prior mean function of a GP.
#[derive(Clone)]
pub enum MeanFn {
    Constant(f64),
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl MeanFn {
    #[inline]
    pub fn eval(&self, u: &[f64]) -> f64 {
        match self {
            MeanFn::Constant(c) => *c,
            MeanFn::Custom(f) => f(u),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            MeanFn::Constant(c) => Some(*c),
            MeanFn::Custom(_) => None,
        }
    }
}

impl fmt::Debug for MeanFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeanFn::Constant(c) => write!(f, "Constant({c})"),
            MeanFn::Custom(_) => write!(f, "Custom(<fn>)"),
        }
    }
}

#[derive(Clone, Debug)]
struct Conditioned {
    chol: JitteredCholesky,
    l: DMatrix<f64>,
    alpha: DVector<f64>,
}

/// Single-output GP emulator: prior mean + kernel, optionally conditioned on
/// a design. Immutable once built.
#[derive(Clone, Debug)]
pub struct GaussianEmulator {
    mean: MeanFn,
    kernel: Kernel,
    tau2: f64,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    noise: Vec<f64>,
    state: Option<Conditioned>,
}

impl GaussianEmulator {
    /// The unconditioned prior GP.
    pub fn prior(mean: MeanFn, kernel: Kernel) -> Self {
        Self {
            mean,
            kernel,
            tau2: 0.0,
            inputs: Vec::new(),
            outputs: Vec::new(),
            noise: Vec::new(),
            state: None,
        }
    }

    /// Condition the prior on `(inputs, outputs)` with observation jitter
    /// `tau2`. An empty design returns the prior unchanged.
    pub fn condition(
        mean: MeanFn,
        kernel: Kernel,
        inputs: &DMatrix<f64>,
        outputs: &DVector<f64>,
        tau2: f64,
    ) -> Result<Self> {
        if inputs.nrows() != outputs.len() {
            return Err(Error::Dimension {
                expected: inputs.nrows(),
                got: outputs.len(),
            });
        }
        if inputs.nrows() > 0 && inputs.ncols() != kernel.dim() {
            return Err(Error::Dimension {
                expected: kernel.dim(),
                got: inputs.ncols(),
            });
        }
        if !(tau2 >= 0.0 && tau2.is_finite()) {
            return Err(Error::input(format!("tau2 must be nonnegative, got {tau2}")));
        }
        let rows = rows_of(inputs);
        let n = rows.len();
        Self::build(mean, kernel, tau2, rows, outputs.iter().cloned().collect(), vec![tau2; n])
    }

    fn build(
        mean: MeanFn,
        kernel: Kernel,
        tau2: f64,
        inputs: Vec<Vec<f64>>,
        outputs: Vec<f64>,
        noise: Vec<f64>,
    ) -> Result<Self> {
        let mut em = Self {
            mean,
            kernel,
            tau2,
            inputs,
            outputs,
            noise,
            state: None,
        };
        if em.inputs.is_empty() {
            return Ok(em);
        }
        let mut gram = em.kernel.gram(&em.inputs);
        for (i, t) in em.noise.iter().enumerate() {
            gram[(i, i)] += t;
        }
        let chol = cholesky_jitter(&gram, em.kernel.variance)?;
        let resid = DVector::from_iterator(
            em.inputs.len(),
            em.inputs.iter().zip(&em.outputs).map(|(x, y)| y - em.mean.eval(x)),
        );
        let alpha = chol.solve(&resid);
        let l = chol.l();
        em.state = Some(Conditioned { chol, l, alpha });
        Ok(em)
    }

    /// A copy of this emulator additionally conditioned on the noise-free
    /// observation `f(u) = value`.
    pub fn with_point(&self, u: &[f64], value: f64) -> Result<Self> {
        if u.len() != self.kernel.dim() {
            return Err(Error::Dimension {
                expected: self.kernel.dim(),
                got: u.len(),
            });
        }
        let mut inputs = self.inputs.clone();
        let mut outputs = self.outputs.clone();
        let mut noise = self.noise.clone();
        inputs.push(u.to_vec());
        outputs.push(value);
        noise.push(0.0);
        Self::build(self.mean.clone(), self.kernel.clone(), self.tau2, inputs, outputs, noise)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn mean_fn(&self) -> &MeanFn {
        &self.mean
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn design_inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn design_outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn design_noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn n_design(&self) -> usize {
        self.inputs.len()
    }

    /// Jitter added to the Gram diagonal during factorization (0 if none).
    pub fn jitter(&self) -> f64 {
        self.state.as_ref().map_or(0.0, |s| s.chol.jitter)
    }

    pub(crate) fn cross_vector(&self, u: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|x| self.kernel.k(x, u)))
    }

    pub(crate) fn solve_gram(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        self.state.as_ref().map(|s| s.chol.solve(b))
    }

    pub fn predict_mean(&self, u: &[f64]) -> f64 {
        let m = self.mean.eval(u);
        match &self.state {
            None => m,
            Some(s) => m + self.cross_vector(u).dot(&s.alpha),
        }
    }

    /// Pointwise predictive mean and variance.
    pub fn predict(&self, u: &[f64]) -> (f64, f64) {
        let m = self.mean.eval(u);
        let prior_var = self.kernel.k(u, u);
        match &self.state {
            None => (m, prior_var),
            Some(s) => {
                let kx = self.cross_vector(u);
                let mean = m + kx.dot(&s.alpha);
                let v = s.l.solve_lower_triangular(&kx).expect("triangular factor");
                ((mean), (prior_var - v.norm_squared()).max(0.0))
            }
        }
    }

    /// Predictive covariance between two points.
    pub fn posterior_cov(&self, a: &[f64], b: &[f64]) -> f64 {
        let prior = self.kernel.k(a, b);
        match &self.state {
            None => prior,
            Some(s) => {
                let va = s.l.solve_lower_triangular(&self.cross_vector(a)).expect("triangular factor");
                let vb = s.l.solve_lower_triangular(&self.cross_vector(b)).expect("triangular factor");
                prior - va.dot(&vb)
            }
        }
    }

    /// Joint predictive law over a finite point set.
    pub fn predict_joint(&self, points: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
        let p = points.len();
        let mut mean = DVector::from_iterator(p, points.iter().map(|u| self.mean.eval(u)));
        let mut cov = self.kernel.gram(points);
        if let Some(s) = &self.state {
            let kx = self.kernel.cross(&self.inputs, points);
            mean += kx.transpose() * &s.alpha;
            let v = s.l.solve_lower_triangular(&kx).expect("triangular factor");
            cov -= v.transpose() * v;
        }
        (mean, crate::linalg::symmetrize(&cov))
    }

    /// Log marginal likelihood of the design outputs under the prior
    /// (including any jitter that factorization required).
    pub fn log_marginal_likelihood(&self) -> f64 {
        match &self.state {
            None => 0.0,
            Some(s) => {
                let resid = DVector::from_iterator(
                    self.inputs.len(),
                    self.inputs.iter().zip(&self.outputs).map(|(x, y)| y - self.mean.eval(x)),
                );
                let n = self.inputs.len() as f64;
                -0.5 * resid.dot(&s.alpha) - 0.5 * s.chol.log_det() - 0.5 * n * LN_2PI
            }
        }
    }

    pub fn to_record(&self) -> Result<EmulatorRecord> {
        let mean_const = self
            .mean
            .as_constant()
            .ok_or_else(|| Error::Capability("only constant-mean emulators serialize".into()))?;
        Ok(EmulatorRecord {
            family: self.kernel.family,
            variance: self.kernel.variance,
            lengthscales: self.kernel.lengthscales.clone(),
            mean_const,
            tau2: self.tau2,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
        })
    }

    pub fn from_record(rec: &EmulatorRecord) -> Result<Self> {
        let kernel = Kernel::new(rec.family, rec.variance, rec.lengthscales.clone())?;
        let n = rec.inputs.len();
        if rec.outputs.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: rec.outputs.len(),
            });
        }
        if rec.inputs.iter().any(|r| r.len() != kernel.dim()) {
            return Err(Error::input("design input rows must match the lengthscale count"));
        }
        Self::build(
            MeanFn::Constant(rec.mean_const),
            kernel,
            rec.tau2,
            rec.inputs.clone(),
            rec.outputs.clone(),
            vec![rec.tau2; n],
        )
    }
}

impl PointwiseSurrogate for GaussianEmulator {
    fn output_dim(&self) -> usize {
        1
    }

    fn predict_pointwise(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (m, v) = self.predict(u);
        (vec![m], vec![v])
    }
}

/// Serialized form of a constant-mean emulator: hyperparameters + design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmulatorRecord {
    pub family: KernelFamily,
    pub variance: f64,
    pub lengthscales: Vec<f64>,
    pub mean_const: f64,
    pub tau2: f64,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
}

/// Independent per-output GPs sharing one design.
#[derive(Clone, Debug)]
pub struct MultiOutputEmulator {
    pub outputs: Vec<GaussianEmulator>,
}

impl MultiOutputEmulator {
    pub fn new(outputs: Vec<GaussianEmulator>) -> Result<Self> {
        if outputs.is_empty() {
            return Err(Error::input("multi-output emulator needs at least one output"));
        }
        let d = outputs[0].dim();
        if outputs.iter().any(|o| o.dim() != d) {
            return Err(Error::input("all outputs must share the input dimension"));
        }
        Ok(Self { outputs })
    }

    pub fn dim(&self) -> usize {
        self.outputs[0].dim()
    }

    pub fn predict_mean(&self, u: &[f64]) -> Vec<f64> {
        self.outputs.iter().map(|o| o.predict_mean(u)).collect()
    }

    pub fn to_records(&self) -> Result<Vec<EmulatorRecord>> {
        self.outputs.iter().map(|o| o.to_record()).collect()
    }

    pub fn from_records(recs: &[EmulatorRecord]) -> Result<Self> {
        Self::new(recs.iter().map(GaussianEmulator::from_record).collect::<Result<_>>()?)
    }
}

impl PointwiseSurrogate for MultiOutputEmulator {
    fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    fn predict_pointwise(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.outputs.iter().map(|o| o.predict(u)).unzip()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn se(v: f64, l: f64) -> Kernel {
        Kernel::squared_exponential(v, vec![l]).unwrap()
    }

    #[test]
    fn empty_design_is_prior() {
        let em = GaussianEmulator::condition(
            MeanFn::Constant(0.7),
            se(2.0, 0.5),
            &DMatrix::zeros(0, 1),
            &DVector::zeros(0),
            0.0,
        )
        .unwrap();
        for u in [-1.0, 0.0, 3.0] {
            assert_eq!(em.predict(&[u]), (0.7, 2.0));
        }
        assert!((em.posterior_cov(&[0.0], &[0.5]) - se(2.0, 0.5).k(&[0.0], &[0.5])).abs() < 1e-15);
    }

    #[test]
    fn single_point_interpolates() {
        let em = GaussianEmulator::condition(
            MeanFn::Constant(0.0),
            se(1.0, 1.0),
            &DMatrix::from_element(1, 1, 0.3),
            &DVector::from_element(1, 2.5),
            0.0,
        )
        .unwrap();
        let (m, v) = em.predict(&[0.3]);
        assert!((m - 2.5).abs() < 1e-8);
        assert!(v < 1e-8);
    }

    #[test]
    fn two_points_match_dense_solve() {
        // Hand-rolled 2x2 inverse.
        let k = se(1.3, 0.7);
        let x = [0.1, 0.9];
        let y = [1.0, -0.5];
        let (c, tau2) = (0.2, 1e-3);
        let em = GaussianEmulator::condition(
            MeanFn::Constant(c),
            k.clone(),
            &DMatrix::from_column_slice(2, 1, &x),
            &DVector::from_column_slice(&y),
            tau2,
        )
        .unwrap();
        let a = k.k(&[x[0]], &[x[0]]) + tau2;
        let b = k.k(&[x[0]], &[x[1]]);
        let d = k.k(&[x[1]], &[x[1]]) + tau2;
        let det = a * d - b * b;
        let inv = [[d / det, -b / det], [-b / det, a / det]];
        for &u in &[-0.4, 0.1, 0.5, 1.7] {
            let ks = [k.k(&[u], &[x[0]]), k.k(&[u], &[x[1]])];
            let r = [y[0] - c, y[1] - c];
            let w = [
                inv[0][0] * ks[0] + inv[0][1] * ks[1],
                inv[1][0] * ks[0] + inv[1][1] * ks[1],
            ];
            let mean = c + w[0] * r[0] + w[1] * r[1];
            let var = k.variance - (w[0] * ks[0] + w[1] * ks[1]);
            let (m, v) = em.predict(&[u]);
            assert!((m - mean).abs() < 1e-10, "{m} vs {mean}");
            assert!((v - var).abs() < 1e-10, "{v} vs {var}");
        }
    }

    #[test]
    fn mismatched_rows_error() {
        let r = GaussianEmulator::condition(
            MeanFn::Constant(0.0),
            se(1.0, 1.0),
            &DMatrix::zeros(3, 1),
            &DVector::zeros(2),
            0.0,
        );
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn duplicate_noise_free_points_need_jitter() {
        let em = GaussianEmulator::condition(
            MeanFn::Constant(0.0),
            se(1.0, 1.0),
            &DMatrix::from_column_slice(2, 1, &[0.5, 0.5]),
            &DVector::from_column_slice(&[1.0, 1.0]),
            0.0,
        )
        .unwrap();
        assert!(em.jitter() > 0.0);
    }

    #[test]
    fn variance_never_increases_with_more_data() {
        let mut r = rng::rng(5);
        let k = Kernel::squared_exponential(1.0, vec![0.4, 0.8]).unwrap();
        let n = 8;
        let x = DMatrix::from_fn(n + 1, 2, |_, _| r.random_range(0.0..1.0));
        let y = DVector::from_fn(n + 1, |_, _| r.random_range(-1.0..1.0));
        let small = GaussianEmulator::condition(
            MeanFn::Constant(0.0),
            k.clone(),
            &x.rows(0, n).into_owned(),
            &y.rows(0, n).into_owned(),
            1e-4,
        )
        .unwrap();
        let big = GaussianEmulator::condition(MeanFn::Constant(0.0), k, &x, &y, 1e-4).unwrap();
        for _ in 0..50 {
            let u = [r.random_range(-0.5..1.5), r.random_range(-0.5..1.5)];
            assert!(big.predict(&u).1 <= small.predict(&u).1 + 1e-12);
        }
    }

    #[test]
    fn row_order_does_not_matter() {
        let mut r = rng::rng(6);
        let k = Kernel::squared_exponential(0.8, vec![0.3, 0.6]).unwrap();
        let n = 7;
        let x = DMatrix::from_fn(n, 2, |_, _| r.random_range(0.0..1.0));
        let y = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
        let perm: Vec<usize> = vec![3, 0, 6, 1, 5, 2, 4];
        let xp = DMatrix::from_fn(n, 2, |i, j| x[(perm[i], j)]);
        let yp = DVector::from_fn(n, |i, _| y[perm[i]]);
        let a = GaussianEmulator::condition(MeanFn::Constant(0.1), k.clone(), &x, &y, 1e-5).unwrap();
        let b = GaussianEmulator::condition(MeanFn::Constant(0.1), k, &xp, &yp, 1e-5).unwrap();
        for _ in 0..20 {
            let u = [r.random_range(0.0..1.0), r.random_range(0.0..1.0)];
            let (ma, va) = a.predict(&u);
            let (mb, vb) = b.predict(&u);
            assert!((ma - mb).abs() < 1e-10 && (va - vb).abs() < 1e-10);
        }
    }

    #[test]
    fn record_round_trip_is_exact() {
        let em = GaussianEmulator::condition(
            MeanFn::Constant(0.25),
            se(1.5, 0.3),
            &DMatrix::from_column_slice(3, 1, &[0.0, 0.4, 0.9]),
            &DVector::from_column_slice(&[1.0, 0.2, -0.3]),
            1e-6,
        )
        .unwrap();
        let rec = em.to_record().unwrap();
        let json = serde_json::to_string(&rec).unwrap();
        for key in ["family", "variance", "lengthscales", "mean_const", "tau2", "inputs", "outputs"] {
            assert!(json.contains(&format!("\"{key}\"")), "missing {key}");
        }
        let back: EmulatorRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
        let em2 = GaussianEmulator::from_record(&back).unwrap();
        assert_eq!(em.predict(&[0.6]), em2.predict(&[0.6]));
        assert_eq!(serde_json::to_string(&em2.to_record().unwrap()).unwrap(), json);
    }
}
