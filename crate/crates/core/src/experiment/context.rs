use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::config::ExperimentConfig;
use super::manifest::{Artifact, ArtifactKind, ReplicateResult, ReplicateStatus};
use crate::diagnostics::{write_metrics_csv, CoverageCurve, MetricRow};
use crate::error::{Error, Result};
use crate::linalg::psd_factor;
use crate::linear_gaussian::GaussianMoments;
use crate::posterior::GridDensity;
use crate::rng::{self, derive_seed, std_normal_vec};
use crate::samplers::ChainOutput;

/// Stable numeric label of a stage name, for seed derivation.
fn stage_label(stage: &str) -> u64 {
    // FNV-1a: fixed across platforms and releases.
    stage
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Mutable state of one replicate while it runs: seeds handed out, files
/// written, metric rows and stage timings.
pub(crate) struct ReplicateCtx<'a> {
    pub config: &'a ExperimentConfig,
    pub id: usize,
    base: PathBuf,
    rel: PathBuf,
    seeds: BTreeMap<String, u64>,
    artifacts: Vec<Artifact>,
    metrics: Vec<MetricRow>,
    timings: BTreeMap<String, f64>,
}

impl<'a> ReplicateCtx<'a> {
    /// Prepare an empty directory for replicate `id` under `base`.
    pub fn new(config: &'a ExperimentConfig, base: &Path, id: usize) -> Result<Self> {
        let rel = PathBuf::from(format!("rep_{id:03}"));
        let dir = base.join(&rel);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            config,
            id,
            base: base.to_path_buf(),
            rel,
            seeds: BTreeMap::new(),
            artifacts: Vec::new(),
            metrics: Vec::new(),
            timings: BTreeMap::new(),
        })
    }

    /// Seed of `stage` (with sub-labels `path`) for this replicate. Depends
    /// only on the master seed, the replicate id and the labels.
    pub fn seed(&mut self, stage: &str, path: &[u64]) -> u64 {
        let mut full = vec![self.id as u64, stage_label(stage)];
        full.extend_from_slice(path);
        let s = derive_seed(self.config.seed, &full);
        let key = if path.is_empty() {
            stage.to_string()
        } else {
            let parts: Vec<String> = path.iter().map(|p| p.to_string()).collect();
            format!("{stage}/{}", parts.join("/"))
        };
        self.seeds.insert(key, s);
        s
    }

    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self);
        *self.timings.entry(stage.to_string()).or_default() += start.elapsed().as_secs_f64();
        out
    }

    /// Register a file name in the replicate directory; returns its path.
    pub fn artifact(&mut self, kind: ArtifactKind, name: &str) -> PathBuf {
        let rel = self.rel.join(name);
        let path = self.base.join(&rel);
        self.artifacts.push(Artifact { kind, path: rel });
        path
    }

    pub fn dir(&self) -> PathBuf {
        self.base.join(&self.rel)
    }

    pub fn write_json<T: Serialize>(&mut self, kind: ArtifactKind, name: &str, value: &T) -> Result<()> {
        let path = self.artifact(kind, name);
        let text = serde_json::to_string_pretty(value)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn write_moments(&mut self, label: &str, m: &GaussianMoments) -> Result<()> {
        let path = self.artifact(ArtifactKind::Moments, &format!("moments_{label}.json"));
        crate::linear_gaussian::write_moments_json(&path, m)
    }

    pub fn write_density(&mut self, stem: &str, d: &GridDensity) -> Result<()> {
        if !self.config.artifacts.densities {
            return Ok(());
        }
        let path = self.artifact(ArtifactKind::Density, &format!("density_{stem}.csv"));
        d.write_csv(&path)
    }

    /// Persist a chain, keeping at most `budget.retained` evenly spaced
    /// draws of `samples` (which replace the chain's own sample matrix).
    pub fn write_chain(&mut self, stem: &str, chain: &ChainOutput, samples: &DMatrix<f64>) -> Result<()> {
        if !self.config.artifacts.samples {
            return Ok(());
        }
        let mut out = chain.clone();
        out.samples = thin_rows(samples, self.config.budget.retained);
        out.trajectory_tags = chain
            .trajectory_tags
            .as_ref()
            .map(|t| thin_indices(t.len(), self.config.budget.retained).map(|i| t[i]).collect());
        out.write(&self.dir(), stem)?;
        self.artifact(ArtifactKind::Samples, &format!("samples_{stem}.csv"));
        self.artifact(ArtifactKind::Trace, &format!("trace_{stem}.csv"));
        self.artifact(ArtifactKind::Chain, &format!("chain_{stem}.json"));
        Ok(())
    }

    pub fn metric(&mut self, setting: &str, method: &str, metric: &str, level: Option<f64>, value: f64) {
        self.metrics.push(MetricRow {
            replicate: self.id,
            setting: setting.to_string(),
            method: method.to_string(),
            metric: metric.to_string(),
            level,
            value,
        });
    }

    pub fn coverage(&mut self, setting: &str, curve: &CoverageCurve) {
        for (p, c) in curve.levels.iter().zip(&curve.coverage) {
            self.metric(setting, &curve.method, "coverage", Some(*p), *c);
        }
    }

    /// Write the metrics table and close the replicate.
    pub fn finish(mut self) -> Result<ReplicateResult> {
        let metrics_rel = self.rel.join("metrics.csv");
        let path = self.base.join(&metrics_rel);
        write_metrics_csv(&path, &self.metrics)?;
        let echo = self.artifact(ArtifactKind::Config, "config_echo.toml");
        let text = self.config.to_toml()?;
        std::fs::write(&echo, text).map_err(|e| Error::io(&echo, e))?;
        Ok(ReplicateResult {
            id: self.id,
            status: ReplicateStatus::Completed,
            seeds: self.seeds,
            artifacts: self.artifacts,
            metrics: Some(metrics_rel),
            timings: self.timings,
            error: None,
        })
    }
}

fn thin_indices(n: usize, keep: usize) -> impl Iterator<Item = usize> {
    let step = n.div_ceil(keep.max(1)).max(1);
    (0..n).step_by(step)
}

/// Evenly spaced rows, at most `keep` of them.
pub(crate) fn thin_rows(samples: &DMatrix<f64>, keep: usize) -> DMatrix<f64> {
    let idx: Vec<usize> = thin_indices(samples.nrows(), keep).collect();
    DMatrix::from_fn(idx.len(), samples.ncols(), |i, j| samples[(idx[i], j)])
}

/// `n` independent draws (rows) from a Gaussian.
pub(crate) fn gaussian_draws(m: &GaussianMoments, n: usize, seed: u64) -> DMatrix<f64> {
    let l = psd_factor(&m.cov);
    let mut r = rng::rng(seed);
    let d = m.dim();
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        let x: DVector<f64> = &m.mean + &l * std_normal_vec(&mut r, l.ncols());
        out.row_mut(i).copy_from(&x.transpose());
    }
    out
}
