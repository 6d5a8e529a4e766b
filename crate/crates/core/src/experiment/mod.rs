//! Experiment runner: configs, replicate execution with resume, the run
//! manifest, replicate summaries and named oracle checks.

mod config;
mod context;
mod linear;
mod manifest;
pub mod oracle;
mod pde;
mod summarize;
mod vsem;

pub use config::{
    ArtifactOptions, Budget, ClipBound, CustomLinear, ExperimentConfig, ExperimentKind, Method, SamplerMatrix,
    SurrogateOptions, CONFIG_VERSION,
};
pub use manifest::{Artifact, ArtifactKind, Manifest, ReplicateResult, ReplicateStatus};
pub use summarize::{summarize, SummaryReport};

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use context::ReplicateCtx;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_ECHO_FILE: &str = "config_echo.toml";

/// Share of failed replicates above which a run is reported as failed.
pub const MAX_FAILED_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub manifest: PathBuf,
    pub completed: usize,
    pub reused: usize,
    pub failed: Vec<usize>,
}

/// Run every replicate of `config`, reusing completed replicates already
/// recorded in the output directory's manifest.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let base = config.output_dir.clone();
    std::fs::create_dir_all(&base).map_err(|e| Error::io(&base, e))?;
    let manifest_path = base.join(MANIFEST_FILE);
    let echo_path = base.join(CONFIG_ECHO_FILE);

    let mut manifest = if manifest_path.exists() {
        let m = Manifest::load(&manifest_path)?;
        check_same_run(config, &m, &echo_path)?;
        m
    } else {
        Manifest {
            version: CONFIG_VERSION,
            experiment: config.experiment,
            seed: config.seed,
            config: PathBuf::from(CONFIG_ECHO_FILE),
            replicates: Vec::new(),
        }
    };
    std::fs::write(&echo_path, config.to_toml()?).map_err(|e| Error::io(&echo_path, e))?;
    manifest.replicates.retain(|r| r.id < config.n_replicates);
    manifest.save(&manifest_path)?;

    let todo: Vec<usize> = (0..config.n_replicates)
        .filter(|&id| !manifest.replicate(id).is_some_and(|r| r.is_reusable(&base)))
        .collect();
    let reused = config.n_replicates - todo.len();
    log::info!("{} replicates to run, {reused} reused", todo.len());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.worker_count())
        .build()
        .map_err(|e| Error::Experiment(format!("cannot start worker pool: {e}")))?;
    let shared = Mutex::new(manifest);
    let save_err: Mutex<Option<Error>> = Mutex::new(None);
    pool.install(|| {
        todo.par_iter().for_each(|&id| {
            let result = run_replicate(config, &base, id);
            if let Some(e) = &result.error {
                log::error!("replicate {id} failed: {e}");
            }
            let mut m = shared.lock().unwrap_or_else(|p| p.into_inner());
            m.upsert(result);
            if let Err(e) = m.save(&manifest_path) {
                *save_err.lock().unwrap_or_else(|p| p.into_inner()) = Some(e);
            }
        })
    });
    if let Some(e) = save_err.into_inner().unwrap_or_else(|p| p.into_inner()) {
        return Err(e);
    }
    let manifest = shared.into_inner().unwrap_or_else(|p| p.into_inner());
    let failed: Vec<usize> = manifest
        .replicates
        .iter()
        .filter(|r| r.status == ReplicateStatus::Failed)
        .map(|r| r.id)
        .collect();
    if failed.len() as f64 > MAX_FAILED_FRACTION * config.n_replicates as f64 {
        return Err(Error::Experiment(format!(
            "{} of {} replicates failed (ids {failed:?})",
            failed.len(),
            config.n_replicates
        )));
    }
    Ok(RunReport {
        manifest: manifest_path,
        completed: manifest.completed().count(),
        reused,
        failed,
    })
}

/// A resumed run must carry the same configuration apart from replicate
/// count, workers and output location.
fn check_same_run(config: &ExperimentConfig, manifest: &Manifest, echo_path: &Path) -> Result<()> {
    if manifest.experiment != config.experiment || manifest.seed != config.seed {
        return Err(Error::input("output directory holds a run of a different experiment or seed"));
    }
    let text = std::fs::read_to_string(echo_path).map_err(|e| Error::io(echo_path, e))?;
    let previous = ExperimentConfig::from_toml(&text)?;
    if previous.fingerprint() != config.fingerprint() {
        return Err(Error::input(format!(
            "output directory {} holds a run with a different configuration",
            config.output_dir.display()
        )));
    }
    Ok(())
}

fn run_replicate(config: &ExperimentConfig, base: &Path, id: usize) -> ReplicateResult {
    let failed = |msg: String| ReplicateResult {
        id,
        status: ReplicateStatus::Failed,
        seeds: BTreeMap::new(),
        artifacts: Vec::new(),
        metrics: None,
        timings: BTreeMap::new(),
        error: Some(msg),
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| -> Result<ReplicateResult> {
        let mut ctx = ReplicateCtx::new(config, base, id)?;
        match config.experiment {
            ExperimentKind::Deconvolution | ExperimentKind::Custom => linear::run(&mut ctx)?,
            ExperimentKind::Vsem => vsem::run(&mut ctx)?,
            ExperimentKind::Pde => pde::run(&mut ctx)?,
        }
        ctx.finish()
    }));
    match outcome {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => failed(e.to_string()),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            failed(format!("panicked: {msg}"))
        }
    }
}
