use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::manifest::{Manifest, ReplicateStatus};
use crate::diagnostics::{read_metrics_csv, replicate_summary, MetricRow, ReplicateSummary};
use crate::error::{Error, Result};

/// Replicate summary of one (setting, method, metric, level) group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupSummary {
    pub setting: String,
    pub method: String,
    pub metric: String,
    pub level: Option<f64>,
    #[serde(flatten)]
    pub summary: ReplicateSummary,
}

/// A group with rows missing for some completed replicates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Gap {
    pub setting: String,
    pub method: String,
    pub metric: String,
    pub level: Option<f64>,
    pub missing_replicates: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SummaryReport {
    pub replicates: Vec<usize>,
    pub failed_replicates: Vec<usize>,
    pub groups: Vec<GroupSummary>,
    pub gaps: Vec<Gap>,
    /// Report tables written, one per metric.
    pub tables: Vec<PathBuf>,
}

type Key = (String, String, String, Option<u64>);

/// Summarize the metrics of every completed replicate in a manifest into
/// `report_<metric>.csv` tables and `report_summary.json`, next to the
/// manifest. Only metric files named by the manifest are read.
pub fn summarize(manifest_path: &Path) -> Result<SummaryReport> {
    let manifest = Manifest::load(manifest_path)?;
    if manifest.replicates.is_empty() {
        return Err(Error::input(format!("manifest {} lists no replicates", manifest_path.display())));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut rows: Vec<MetricRow> = Vec::new();
    let mut replicates = Vec::new();
    for r in manifest.completed() {
        let Some(rel) = &r.metrics else { continue };
        rows.extend(read_metrics_csv(&base.join(rel))?);
        replicates.push(r.id);
    }
    let failed_replicates = manifest
        .replicates
        .iter()
        .filter(|r| r.status == ReplicateStatus::Failed)
        .map(|r| r.id)
        .collect();

    let mut grouped: BTreeMap<Key, BTreeMap<usize, f64>> = BTreeMap::new();
    for row in rows {
        let key = (row.setting, row.method, row.metric, row.level.map(f64::to_bits));
        grouped.entry(key).or_default().insert(row.replicate, row.value);
    }

    let all: BTreeSet<usize> = replicates.iter().copied().collect();
    let mut groups = Vec::new();
    let mut gaps = Vec::new();
    for ((setting, method, metric, level), values) in &grouped {
        let level = level.map(f64::from_bits);
        let missing: Vec<usize> = all.iter().filter(|id| !values.contains_key(id)).copied().collect();
        if !missing.is_empty() {
            gaps.push(Gap {
                setting: setting.clone(),
                method: method.clone(),
                metric: metric.clone(),
                level,
                missing_replicates: missing,
            });
        }
        let v: Vec<f64> = values.values().copied().collect();
        if let Some(summary) = replicate_summary(&v) {
            groups.push(GroupSummary {
                setting: setting.clone(),
                method: method.clone(),
                metric: metric.clone(),
                level,
                summary,
            });
        }
    }
    // Level bits do not sort numerically.
    groups.sort_by(|a, b| {
        (&a.metric, &a.setting, &a.method)
            .cmp(&(&b.metric, &b.setting, &b.method))
            .then(a.level.unwrap_or(f64::NAN).total_cmp(&b.level.unwrap_or(f64::NAN)))
    });

    let mut tables = Vec::new();
    let metrics: BTreeSet<&str> = groups.iter().map(|g| g.metric.as_str()).collect();
    for metric in metrics {
        let path = base.join(format!("report_{metric}.csv"));
        write_table(&path, groups.iter().filter(|g| g.metric == metric))?;
        tables.push(path);
    }
    let report = SummaryReport {
        replicates,
        failed_replicates,
        groups,
        gaps,
        tables,
    };
    let path = base.join("report_summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

fn write_table<'a>(path: &Path, groups: impl Iterator<Item = &'a GroupSummary>) -> Result<()> {
    let ser = |e: csv::Error| Error::Serde(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(ser)?;
    w.write_record(["setting", "method", "level", "median", "q05", "q95", "n"]).map_err(ser)?;
    for g in groups {
        let level = g.level.map(|l| format!("{l:?}")).unwrap_or_default();
        w.write_record([
            g.setting.clone(),
            g.method.clone(),
            level,
            format!("{:?}", g.summary.median),
            format!("{:?}", g.summary.q05),
            format!("{:?}", g.summary.q95),
            g.summary.n.to_string(),
        ])
        .map_err(ser)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
