use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::Grid;

/// Proposal kernel for the parameter `u`. All variants are symmetric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum UProposal {
    /// `u' = u + s·diag(scales)·ξ`, with the global factor `s` adapted.
    RandomWalk { scales: Vec<f64> },
    /// `u' = u + s·L·ξ` for a fixed factor `L` (e.g. of an approximate
    /// posterior covariance).
    Preconditioned { factor: DMatrix<f64>, scale: f64 },
    /// Jump between grid nodes by an integer offset drawn uniformly from
    /// `[-window, window]` per dimension (the all-zero offset is redrawn).
    /// Offsets leaving the grid are rejected.
    Grid { grid: Grid, window: usize },
}

impl UProposal {
    pub fn random_walk(scales: Vec<f64>) -> Self {
        UProposal::RandomWalk { scales }
    }

    pub fn dim(&self) -> usize {
        match self {
            UProposal::RandomWalk { scales } => scales.len(),
            UProposal::Preconditioned { factor, .. } => factor.nrows(),
            UProposal::Grid { grid, .. } => grid.dim(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            UProposal::RandomWalk { scales } => {
                if scales.is_empty() || scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                    return Err(Error::input("random-walk scales must be finite and non-negative"));
                }
            }
            UProposal::Preconditioned { factor, scale } => {
                if !factor.is_square() || factor.nrows() == 0 || factor.iter().any(|v| !v.is_finite()) {
                    return Err(Error::input("preconditioner factor must be a finite square matrix"));
                }
                if !(scale.is_finite() && *scale >= 0.0) {
                    return Err(Error::input("preconditioner scale must be finite and non-negative"));
                }
            }
            UProposal::Grid { window, .. } => {
                if *window == 0 {
                    return Err(Error::input("grid proposal window must be at least 1"));
                }
            }
        }
        Ok(())
    }
}

fn default_target_acceptance() -> f64 {
    0.3
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub proposal: UProposal,
    /// pCN correlation of the trajectory move; ignored by plain MH.
    #[serde(default)]
    pub rho: f64,
    pub seed: u64,
    /// Adapt the proposal scale towards `target_acceptance` during burn-in.
    #[serde(default)]
    pub adapt: bool,
    #[serde(default = "default_target_acceptance")]
    pub target_acceptance: f64,
    /// Number of u-moves per trajectory move.
    #[serde(default = "one")]
    pub u_steps: usize,
    /// Keep a per-iteration record of every u-move.
    #[serde(default)]
    pub record_moves: bool,
}

impl SamplerConfig {
    pub fn new(n_iterations: usize, burn_in: usize, proposal: UProposal, seed: u64) -> Self {
        Self {
            n_iterations,
            burn_in,
            thinning: 1,
            proposal,
            rho: 0.0,
            seed,
            adapt: true,
            target_acceptance: default_target_acceptance(),
            u_steps: 1,
            record_moves: false,
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_thinning(mut self, thinning: usize) -> Self {
        self.thinning = thinning;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n_iterations == 0 || self.burn_in >= self.n_iterations {
            return Err(Error::input(format!(
                "need 0 <= burn_in < n_iterations (got {} and {})",
                self.burn_in, self.n_iterations
            )));
        }
        if self.thinning == 0 || self.u_steps == 0 {
            return Err(Error::input("thinning and u_steps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::input(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::input("target acceptance must lie in (0, 1)"));
        }
        self.proposal.validate()?;
        if self.proposal.dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: self.proposal.dim(),
            });
        }
        Ok(())
    }

    pub fn n_retained(&self) -> usize {
        (self.n_iterations - self.burn_in) / self.thinning
    }

    pub(crate) fn retains(&self, iteration: usize) -> bool {
        iteration >= self.burn_in && (iteration - self.burn_in + 1) % self.thinning == 0
    }
}

/// One logged u-move.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub log_current: f64,
    pub log_proposed: f64,
    pub alpha: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainFlags {
    /// Just-in-time bivariate covariances that were near-singular.
    pub singular_projections: usize,
    /// Trajectory moves rejected because the proposed normalizer underflowed.
    pub underflow_rejections: usize,
    /// Trajectories skipped because their density could not be normalized.
    pub skipped_trajectories: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainOutput {
    pub sampler: String,
    /// Retained draws, one row per sample.
    #[serde(skip)]
    pub samples: DMatrix<f64>,
    /// Trajectory index of each retained draw, for samplers that carry one.
    #[serde(skip)]
    pub trajectory_tags: Option<Vec<usize>>,
    pub u_acceptance: f64,
    pub f_acceptance: Option<f64>,
    #[serde(skip)]
    pub log_density_trace: Vec<f64>,
    #[serde(skip)]
    pub moves: Vec<MoveRecord>,
    /// Adapted proposal scale factor at the end of burn-in.
    pub scale_factor: f64,
    pub flags: ChainFlags,
    pub seed: u64,
    pub config: SamplerConfig,
}

impl ChainOutput {
    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn sample_rows(&self) -> Vec<Vec<f64>> {
        self.samples.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// Write `samples_<stem>.csv`, `trace_<stem>.csv` and the JSON sidecar
    /// `chain_<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let path = dir.join(format!("samples_{stem}.csv"));
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header: Vec<String> = (1..=self.samples.ncols()).map(|j| format!("u{j}")).collect();
        if self.trajectory_tags.is_some() {
            header.push("trajectory".into());
        }
        w.write_record(&header).map_err(|e| Error::Serde(e.to_string()))?;
        for (i, row) in self.samples.row_iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
            if let Some(tags) = &self.trajectory_tags {
                rec.push(tags[i].to_string());
            }
            w.write_record(&rec).map_err(|e| Error::Serde(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join(format!("trace_{stem}.csv"));
        let mut body = String::from("iteration,log_density\n");
        for (i, v) in self.log_density_trace.iter().enumerate() {
            body.push_str(&format!("{i},{v}\n"));
        }
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;

        let path = dir.join(format!("chain_{stem}.json"));
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(serde_json::to_string_pretty(self)?.as_bytes())
            .map_err(|e| Error::io(&path, e))
    }
}
