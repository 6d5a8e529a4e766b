use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{uniform_box_log_prior, InverseProblem, TargetRole};
use crate::rng::{self, derive_seed, std_normal};

pub const DAYS_PER_MONTH: [usize; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];

/// Full VSEM parameter set (time constants in days).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VsemParams {
    /// Fraction of NPP allocated to above-ground vegetation.
    pub alpha_v: f64,
    pub tau_v: f64,
    pub tau_r: f64,
    pub tau_s: f64,
    /// Fraction of GPP lost to autotrophic respiration.
    pub gamma: f64,
    /// Light-use efficiency (kg C per MJ).
    pub lue: f64,
    pub k_ext: f64,
    /// Leaf area per unit above-ground carbon.
    pub lar: f64,
    pub cv0: f64,
    pub cr0: f64,
    pub cs0: f64,
}

impl VsemParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_v > 0.0 && self.alpha_v < 1.0) {
            return Err(Error::input(format!("alpha_v must be in (0, 1), got {}", self.alpha_v)));
        }
        for (name, v) in [("tau_v", self.tau_v), ("tau_r", self.tau_r), ("tau_s", self.tau_s)] {
            if !(v > 0.0) {
                return Err(Error::input(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn lai(&self, cv: f64) -> f64 {
        self.lar * cv
    }

    pub fn gpp(&self, cv: f64, w: f64) -> f64 {
        w * self.lue * (1.0 - (-self.k_ext * self.lai(cv)).exp())
    }

    pub fn npp(&self, cv: f64, w: f64) -> f64 {
        (1.0 - self.gamma) * self.gpp(cv, w)
    }

    /// Right-hand side of the pool ODEs at state `x = (C_v, C_r, C_s)`.
    pub fn rhs(&self, x: [f64; 3], w: f64) -> [f64; 3] {
        let [cv, cr, cs] = x;
        let npp = self.npp(cv, w);
        [
            self.alpha_v * npp - cv / self.tau_v,
            (1.0 - self.alpha_v) * npp - cr / self.tau_r,
            cr / self.tau_r + cv / self.tau_v - cs / self.tau_s,
        ]
    }
}

/// Daily pool trajectory; row `t` is the state on day `t` (row 0 is the
/// initial condition).
#[derive(Clone, Debug)]
pub struct VsemTrajectory {
    pub states: Vec<[f64; 3]>,
    /// Set when some pool went negative and was clamped to zero.
    pub clamped: bool,
}

impl VsemTrajectory {
    pub fn lai(&self, params: &VsemParams) -> Vec<f64> {
        self.states.iter().map(|x| params.lai(x[0])).collect()
    }
}

/// One explicit Euler step with a one-day time step.
pub fn vsem_step(params: &VsemParams, x: [f64; 3], w: f64) -> ([f64; 3], bool) {
    let d = params.rhs(x, w);
    let mut clamped = false;
    let mut next = [0.0; 3];
    for k in 0..3 {
        next[k] = x[k] + d[k];
        if next[k] < 0.0 {
            next[k] = 0.0;
            clamped = true;
        }
    }
    (next, clamped)
}

/// Euler solve over `horizon` days (`horizon` rows, using drivers
/// `w[0..horizon-1]`).
pub fn vsem_solve(params: &VsemParams, driver: &[f64], horizon: usize) -> Result<VsemTrajectory> {
    params.validate()?;
    if horizon == 0 || driver.len() + 1 < horizon {
        return Err(Error::input(format!(
            "driver of length {} cannot cover a {horizon}-day horizon",
            driver.len()
        )));
    }
    if let Some(w) = driver.iter().find(|w| !w.is_finite()) {
        return Err(Error::input(format!("driver contains a non-finite value {w}")));
    }
    let mut states = Vec::with_capacity(horizon);
    let mut x = [params.cv0, params.cr0, params.cs0];
    let mut clamped = false;
    states.push(x);
    for w in driver.iter().take(horizon - 1) {
        let (next, c) = vsem_step(params, x, *w);
        clamped |= c;
        x = next;
        states.push(x);
    }
    Ok(VsemTrajectory { states, clamped })
}

/// Calendar-month means of a daily series over a 365-day year.
pub fn monthly_means(daily: &[f64]) -> Result<[f64; 12]> {
    if daily.len() < 365 {
        return Err(Error::input("monthly means need a full 365-day series"));
    }
    let mut out = [0.0; 12];
    let mut start = 0;
    for (m, &n) in DAYS_PER_MONTH.iter().enumerate() {
        out[m] = daily[start..start + n].iter().sum::<f64>() / n as f64;
        start += n;
    }
    Ok(out)
}

/// Forward map `u = (α_v, C_v⁰) ↦` monthly mean LAI.
pub fn vsem_forward(u: &[f64], fixed: &VsemParams, driver: &[f64]) -> Result<[f64; 12]> {
    if u.len() != 2 {
        return Err(Error::Dimension { expected: 2, got: u.len() });
    }
    let params = VsemParams {
        alpha_v: u[0],
        cv0: u[1],
        ..*fixed
    };
    let traj = vsem_solve(&params, driver, 365)?;
    monthly_means(&traj.lai(&params))
}

/// Seasonal photosynthetically active radiation with Gaussian noise,
/// truncated at zero.
pub fn synthetic_driver(n_days: usize, amplitude: f64, noise_sd: f64, seed: u64) -> Vec<f64> {
    let mut r = rng::rng(seed);
    (0..n_days)
        .map(|t| {
            let phase = 2.0 * std::f64::consts::PI * t as f64 / 365.0 - std::f64::consts::FRAC_PI_2;
            (amplitude * (1.0 + phase.sin()) / 2.0 + noise_sd * std_normal(&mut r)).max(0.0)
        })
        .collect()
}

/// Sampling ranges for the parameters that are not calibrated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VsemRanges {
    pub tau_v: (f64, f64),
    pub tau_r: (f64, f64),
    pub tau_s: (f64, f64),
    pub gamma: (f64, f64),
    pub lue: (f64, f64),
    pub k_ext: (f64, f64),
    pub lar: (f64, f64),
    pub cr0: (f64, f64),
    pub cs0: (f64, f64),
}

impl Default for VsemRanges {
    fn default() -> Self {
        Self {
            tau_v: (500.0, 3000.0),
            tau_r: (500.0, 3000.0),
            tau_s: (4000.0, 50000.0),
            gamma: (0.2, 0.6),
            lue: (0.001, 0.002),
            k_ext: (0.4, 1.0),
            lar: (0.5, 4.0),
            cr0: (0.0, 6.0),
            cs0: (0.0, 30.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VsemSpec {
    pub ranges: VsemRanges,
    pub alpha_v_prior: (f64, f64),
    pub cv0_prior: (f64, f64),
    pub sigma2: f64,
    pub horizon: usize,
    pub driver_amplitude: f64,
    pub driver_noise_sd: f64,
}

impl Default for VsemSpec {
    fn default() -> Self {
        Self {
            ranges: VsemRanges::default(),
            alpha_v_prior: (0.4, 1.0),
            cv0_prior: (0.0, 10.0),
            sigma2: 1.0,
            horizon: 365,
            driver_amplitude: 8.0,
            driver_noise_sd: 1.0,
        }
    }
}

impl VsemSpec {
    pub fn support(&self) -> Vec<(f64, f64)> {
        vec![self.alpha_v_prior, self.cv0_prior]
    }
}

/// A sampled VSEM calibration problem. `forward` treats the monthly LAI map
/// as the target; `log_posterior` treats `log π₀ + log L` as the target.
#[derive(Clone, Debug)]
pub struct VsemInstance {
    pub spec: VsemSpec,
    pub seed: u64,
    pub params: VsemParams,
    pub driver: Arc<Vec<f64>>,
    pub u_true: Vec<f64>,
    pub y: DVector<f64>,
    pub forward: InverseProblem,
    pub log_posterior: InverseProblem,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VsemRecord {
    pub spec: VsemSpec,
    pub seed: u64,
    pub params: VsemParams,
    pub u_true: Vec<f64>,
    pub y: Vec<f64>,
}

fn uniform<R: Rng>(r: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        r.random_range(lo..hi)
    } else {
        lo
    }
}

pub fn build_vsem(spec: &VsemSpec, seed: u64) -> Result<VsemInstance> {
    if spec.horizon != 365 {
        return Err(Error::input("monthly LAI observations need a 365-day horizon"));
    }
    if !(spec.sigma2 > 0.0) {
        return Err(Error::input("sigma2 must be positive"));
    }
    let driver = Arc::new(synthetic_driver(
        spec.horizon,
        spec.driver_amplitude,
        spec.driver_noise_sd,
        derive_seed(seed, &[0]),
    ));
    let mut r = rng::rng(derive_seed(seed, &[1]));
    let rg = &spec.ranges;
    let params = VsemParams {
        alpha_v: 0.5,
        tau_v: uniform(&mut r, rg.tau_v),
        tau_r: uniform(&mut r, rg.tau_r),
        tau_s: uniform(&mut r, rg.tau_s),
        gamma: uniform(&mut r, rg.gamma),
        lue: uniform(&mut r, rg.lue),
        k_ext: uniform(&mut r, rg.k_ext),
        lar: uniform(&mut r, rg.lar),
        cv0: 1.0,
        cr0: uniform(&mut r, rg.cr0),
        cs0: uniform(&mut r, rg.cs0),
    };
    let u_true = vec![uniform(&mut r, spec.alpha_v_prior), uniform(&mut r, spec.cv0_prior)];
    let clean = vsem_forward(&u_true, &params, &driver)?;
    let sd = spec.sigma2.sqrt();
    let y = DVector::from_iterator(12, clean.iter().map(|v| v + sd * std_normal(&mut r)));

    let support = spec.support();
    let prior = uniform_box_log_prior(&support);
    let (p2, d2) = (params, driver.clone());
    let forward = InverseProblem::forward(prior.clone(), support.clone(), y.clone(), DMatrix::identity(12, 12) * spec.sigma2)?
        .with_exact_target(Arc::new(move |u| Ok(vsem_forward(u, &p2, &d2)?.to_vec())));
    let fwd = forward.clone();
    let log_posterior = InverseProblem::log_density(TargetRole::LogPosterior, prior, support)?
        .with_exact_target(Arc::new(move |u| Ok(vec![fwd.exact_log_density(u)?])));
    Ok(VsemInstance {
        spec: spec.clone(),
        seed,
        params,
        driver,
        u_true,
        y,
        forward,
        log_posterior,
    })
}

impl VsemInstance {
    pub fn record(&self) -> VsemRecord {
        VsemRecord {
            spec: self.spec.clone(),
            seed: self.seed,
            params: self.params,
            u_true: self.u_true.clone(),
            y: self.y.iter().copied().collect(),
        }
    }
}
