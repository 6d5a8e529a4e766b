use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentKind;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArtifactKind {
    Problem,
    Surrogate,
    Moments,
    Density,
    Samples,
    Trace,
    Chain,
    Metrics,
    Config,
}

/// A file written by a replicate, relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub kind: ArtifactKind,
    pub path: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplicateStatus {
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub id: usize,
    pub status: ReplicateStatus,
    /// Seeds by stage label.
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<Artifact>,
    /// Metrics table, relative to the manifest's directory.
    pub metrics: Option<PathBuf>,
    /// Wall-clock seconds by stage.
    pub timings: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReplicateResult {
    /// Completed, with every referenced file present under `base`.
    pub fn is_reusable(&self, base: &Path) -> bool {
        self.status == ReplicateStatus::Completed
            && self.metrics.as_ref().is_some_and(|m| base.join(m).is_file())
            && self.artifacts.iter().all(|a| base.join(&a.path).is_file())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub experiment: ExperimentKind,
    pub seed: u64,
    /// Config echo, relative to the manifest's directory.
    pub config: PathBuf,
    pub replicates: Vec<ReplicateResult>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn replicate(&self, id: usize) -> Option<&ReplicateResult> {
        self.replicates.iter().find(|r| r.id == id)
    }

    /// Insert or replace the entry for `result.id`, keeping ids sorted.
    pub fn upsert(&mut self, result: ReplicateResult) {
        self.replicates.retain(|r| r.id != result.id);
        let at = self.replicates.partition_point(|r| r.id < result.id);
        self.replicates.insert(at, result);
    }

    pub fn completed(&self) -> impl Iterator<Item = &ReplicateResult> {
        self.replicates.iter().filter(|r| r.status == ReplicateStatus::Completed)
    }

    /// Check that every file referenced by a completed replicate exists and
    /// parses (JSON as JSON, CSV as a rectangular table).
    pub fn verify(&self, base: &Path) -> Result<()> {
        for r in self.completed() {
            let files = r.artifacts.iter().map(|a| &a.path).chain(r.metrics.iter());
            for rel in files {
                let path = base.join(rel);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                match path.extension().and_then(|e| e.to_str()) {
                    Some("json") => {
                        serde_json::from_str::<serde_json::Value>(&text)?;
                    }
                    Some("csv") => {
                        let mut rd = csv::Reader::from_reader(text.as_bytes());
                        for rec in rd.records() {
                            rec.map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: usize) -> ReplicateResult {
        ReplicateResult {
            id,
            status: ReplicateStatus::Completed,
            seeds: BTreeMap::new(),
            artifacts: vec![],
            metrics: Some(PathBuf::from(format!("rep_{id:03}/metrics.csv"))),
            timings: BTreeMap::new(),
            error: None,
        }
    }

    #[test]
    fn upsert_keeps_order_and_replaces() {
        let mut m = Manifest {
            version: 1,
            experiment: ExperimentKind::Deconvolution,
            seed: 0,
            config: "config_echo.toml".into(),
            replicates: vec![],
        };
        for id in [3, 0, 2, 1] {
            m.upsert(entry(id));
        }
        let mut failed = entry(2);
        failed.status = ReplicateStatus::Failed;
        m.upsert(failed);
        let ids: Vec<usize> = m.replicates.iter().map(|r| r.id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
        assert_eq!(m.completed().count(), 3);
    }

    #[test]
    fn reuse_requires_files() {
        let dir = tempfile::tempdir().unwrap();
        let e = entry(0);
        assert!(!e.is_reusable(dir.path()));
        std::fs::create_dir_all(dir.path().join("rep_000")).unwrap();
        std::fs::write(dir.path().join("rep_000/metrics.csv"), "a\n1\n").unwrap();
        assert!(e.is_reusable(dir.path()));
    }
}
