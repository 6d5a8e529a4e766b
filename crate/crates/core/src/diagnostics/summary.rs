use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
    pub n: usize,
}

/// Median and middle-90% band of per-replicate values (type-7 quantiles).
/// NaN entries are ignored; `None` when nothing finite remains.
pub fn replicate_summary(values: &[f64]) -> Option<ReplicateSummary> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    Some(ReplicateSummary {
        median: quantile_sorted(&v, 0.5),
        q05: quantile_sorted(&v, 0.05),
        q95: quantile_sorted(&v, 0.95),
        n: v.len(),
    })
}

/// One row of a metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub replicate: usize,
    /// Experimental setting such as surrogate variant and design size;
    /// empty when an experiment has a single setting.
    pub setting: String,
    pub method: String,
    pub metric: String,
    /// Nominal level, ε or design size, when the metric has one.
    pub level: Option<f64>,
    pub value: f64,
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(|e| Error::Serde(e.to_string())))
        .collect()
}
