use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear_gaussian::{LinearGaussianProblem, LinearSurrogate};
use crate::problems::{DeconvolutionSpec, PdeSpec, VsemSpec};

/// Schema version written to and expected in every config file.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Deconvolution,
    Vsem,
    Pde,
    /// A user-supplied linear-Gaussian problem and surrogate.
    Custom,
}

/// Registered methods a config may request beyond the closed-form and grid
/// approximations every experiment computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Random-kernel pCN over the configured ρ values (ρ = 0 is the
    /// independent cut scheme).
    Rkpcn,
    /// Correlated pseudo-marginal sampler for the EUP, over the ρ values.
    CpmEup,
    /// Metropolis-within-Gibbs on a gridded ensemble (VSEM only).
    Mwg,
    /// Metropolis within Monte Carlo baseline (PDE only).
    Mwmc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rkpcn => "rkpcn",
            Method::CpmEup => "cpm-eup",
            Method::Mwg => "mwg",
            Method::Mwmc => "mwmc",
        }
    }

    fn supported_by(self, kind: ExperimentKind) -> bool {
        match self {
            Method::Rkpcn | Method::CpmEup => true,
            Method::Mwg => kind == ExperimentKind::Vsem,
            Method::Mwmc => kind == ExperimentKind::Pde,
        }
    }
}

/// Upper bound used by clipped surrogates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipBound {
    /// Supremum of the Gaussian log-likelihood plus the log prior.
    #[default]
    Supremum,
    /// `log det(2πσ²I) + log π₀(u)`.
    LogDet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateOptions {
    /// Design sizes N, one setting each (VSEM and PDE).
    pub design_sizes: Vec<usize>,
    /// Surrogate variants to run: `false` plain GP, `true` clipped GP (VSEM).
    pub clipped: Vec<bool>,
    pub clip_bound: ClipBound,
    /// Lengthscale box as multiples of each input's design range.
    pub lengthscale_range: (f64, f64),
    pub restarts: usize,
}

impl Default for SurrogateOptions {
    fn default() -> Self {
        Self {
            design_sizes: vec![4, 8, 16],
            clipped: vec![false, true],
            clip_bound: ClipBound::Supremum,
            lengthscale_range: (0.01, 10.0),
            restarts: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerMatrix {
    pub methods: Vec<Method>,
    pub rho: Vec<f64>,
    /// u-moves per trajectory move.
    pub u_steps: usize,
}

impl Default for SamplerMatrix {
    fn default() -> Self {
        Self {
            methods: vec![Method::Rkpcn],
            rho: vec![0.0, 0.9, 0.95, 0.99],
            u_steps: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    pub iterations: usize,
    /// Burn-in iterations; half the chain when absent.
    pub burn_in: Option<usize>,
    /// Draws persisted (and used for sample-based metrics) per chain.
    pub retained: usize,
    /// MwMC trajectories S.
    pub trajectories: usize,
    /// MwMC draws kept per trajectory M.
    pub keep_per_trajectory: usize,
    /// Iterations of each MwMC inner chain.
    pub inner_iterations: usize,
    /// Trajectories in gridded EP ensembles.
    pub ensemble_size: usize,
    pub rff_features: usize,
    /// Grid nodes per dimension for gridded densities.
    pub grid_nodes: usize,
    /// Draws per Gaussian approximation for ellipsoidal coverage.
    pub coverage_samples: usize,
    /// Sub-sample size for Sinkhorn distances.
    pub sinkhorn_points: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            iterations: 100_000,
            burn_in: None,
            retained: 5000,
            trajectories: 100,
            keep_per_trajectory: 10,
            inner_iterations: 4000,
            ensemble_size: 100,
            rff_features: 500,
            grid_nodes: 100,
            coverage_samples: 4000,
            sinkhorn_points: 1000,
        }
    }
}

impl Budget {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.iterations / 2)
    }

    /// Thinning that keeps about `retained` post-burn-in draws.
    pub fn thinning(&self) -> usize {
        ((self.iterations - self.burn_in()) / self.retained.max(1)).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactOptions {
    /// Persist every gridded density as CSV.
    pub densities: bool,
    /// Persist retained chain draws as CSV.
    pub samples: bool,
}

impl Default for ArtifactOptions {
    fn default() -> Self {
        Self {
            densities: true,
            samples: true,
        }
    }
}

/// A linear-Gaussian problem given explicitly, with its surrogate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomLinear {
    /// Forward matrix, one inner list per row.
    pub g: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub m0: Vec<f64>,
    pub c0: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub r: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::input(format!("{what} must be a nonempty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

impl CustomLinear {
    pub fn build(&self) -> Result<(LinearGaussianProblem, LinearSurrogate)> {
        let prob = LinearGaussianProblem::new(
            matrix(&self.g, "g")?,
            matrix(&self.sigma, "sigma")?,
            DVector::from_column_slice(&self.m0),
            matrix(&self.c0, "c0")?,
            DVector::from_column_slice(&self.y),
        )?;
        let sur = LinearSurrogate::new(DVector::from_column_slice(&self.r), matrix(&self.q, "q")?)?;
        Ok((prob, sur))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub experiment: ExperimentKind,
    pub n_replicates: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads for replicates; the `SURROGATE_EP_WORKERS` variable
    /// overrides it, and all cores are used when both are absent.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub surrogate: SurrogateOptions,
    #[serde(default)]
    pub samplers: SamplerMatrix,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub artifacts: ArtifactOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deconvolution: Option<DeconvolutionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vsem: Option<VsemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pde: Option<PdeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomLinear>,
}

impl ExperimentConfig {
    /// A config with default options for `experiment`.
    pub fn new(experiment: ExperimentKind, n_replicates: usize, seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            version: CONFIG_VERSION,
            experiment,
            n_replicates,
            seed,
            output_dir: output_dir.into(),
            workers: None,
            surrogate: SurrogateOptions::default(),
            samplers: SamplerMatrix::default(),
            budget: Budget::default(),
            artifacts: ArtifactOptions::default(),
            deconvolution: None,
            vsem: None,
            pde: None,
            custom: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Read and validate a config file. A relative `output_dir` is resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::input(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.n_replicates == 0 {
            return Err(Error::input("n_replicates must be positive"));
        }
        if self.workers == Some(0) {
            return Err(Error::input("workers must be positive"));
        }
        let b = &self.budget;
        let positive = [
            ("iterations", b.iterations),
            ("retained", b.retained),
            ("trajectories", b.trajectories),
            ("keep_per_trajectory", b.keep_per_trajectory),
            ("inner_iterations", b.inner_iterations),
            ("ensemble_size", b.ensemble_size),
            ("rff_features", b.rff_features),
            ("grid_nodes", b.grid_nodes),
            ("coverage_samples", b.coverage_samples),
            ("sinkhorn_points", b.sinkhorn_points),
            ("u_steps", self.samplers.u_steps),
            ("restarts", self.surrogate.restarts),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::input(format!("{name} must be positive")));
            }
        }
        if b.burn_in() >= b.iterations {
            return Err(Error::input("burn_in must be smaller than iterations"));
        }
        if b.inner_iterations / 2 < b.keep_per_trajectory {
            return Err(Error::input("inner_iterations must leave keep_per_trajectory draws after burn-in"));
        }
        if self.samplers.rho.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::input("every rho must lie in [0, 1]"));
        }
        for m in &self.samplers.methods {
            if !m.supported_by(self.experiment) {
                return Err(Error::input(format!(
                    "method {} is not available for the {:?} experiment",
                    m.name(),
                    self.experiment
                )));
            }
        }
        let (lo, hi) = self.surrogate.lengthscale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::input("lengthscale_range must satisfy 0 < lo <= hi"));
        }
        match self.experiment {
            ExperimentKind::Deconvolution => self.deconvolution_spec().validate()?,
            ExperimentKind::Vsem | ExperimentKind::Pde => {
                if self.surrogate.design_sizes.is_empty() || self.surrogate.design_sizes.iter().any(|&n| n < 2) {
                    return Err(Error::input("design_sizes must be nonempty with every N >= 2"));
                }
                if self.experiment == ExperimentKind::Vsem && self.surrogate.clipped.is_empty() {
                    return Err(Error::input("clipped must list at least one surrogate variant"));
                }
                if self.experiment == ExperimentKind::Pde {
                    self.pde_spec().validate()?;
                }
            }
            ExperimentKind::Custom => {
                let c = self
                    .custom
                    .as_ref()
                    .ok_or_else(|| Error::input("custom experiments need a [custom] table"))?;
                c.build()?;
            }
        }
        Ok(())
    }

    pub fn deconvolution_spec(&self) -> DeconvolutionSpec {
        self.deconvolution.clone().unwrap_or_default()
    }

    pub fn vsem_spec(&self) -> VsemSpec {
        self.vsem.clone().unwrap_or_default()
    }

    pub fn pde_spec(&self) -> PdeSpec {
        self.pde.clone().unwrap_or_default()
    }

    /// Full paper budgets: five times the replicates and four times the
    /// chain lengths of the desk profile.
    pub fn paper_scale(&self) -> Self {
        let mut c = self.clone();
        c.n_replicates *= 5;
        c.budget.iterations *= 4;
        c.budget.burn_in = c.budget.burn_in.map(|b| b * 4);
        c.budget.inner_iterations *= 4;
        c
    }

    /// Worker count: environment override, then config, then all cores.
    pub fn worker_count(&self) -> usize {
        std::env::var("SURROGATE_EP_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
            .filter(|&n: &usize| n > 0)
            .or(self.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    /// The config with run-local fields (replicate count, workers, output
    /// location) blanked, for comparing a resumed run to the original.
    pub(crate) fn fingerprint(&self) -> Self {
        let mut c = self.clone();
        c.n_replicates = 0;
        c.workers = None;
        c.output_dir = PathBuf::new();
        c
    }
}
