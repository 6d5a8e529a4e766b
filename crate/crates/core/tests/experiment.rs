use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ep_core::diagnostics::{replicate_summary, write_metrics_csv, MetricRow};
use ep_core::experiment::{
    run_experiment, summarize, ExperimentConfig, ExperimentKind, Manifest, Method, ReplicateResult,
    ReplicateStatus, MANIFEST_FILE,
};

fn deconvolution(dir: &Path, replicates: usize, samplers: bool) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(ExperimentKind::Deconvolution, replicates, 11, dir.join("run"));
    c.workers = Some(1);
    c.budget.iterations = 4000;
    c.budget.retained = 1000;
    c.budget.coverage_samples = 1000;
    if samplers {
        c.samplers.methods = vec![Method::Rkpcn];
        c.samplers.rho = vec![0.0, 0.9];
        c.samplers.u_steps = 2;
    } else {
        c.samplers.methods.clear();
    }
    c
}

fn metrics_bytes(cfg: &ExperimentConfig) -> BTreeMap<usize, Vec<u8>> {
    let base = &cfg.output_dir;
    let m = Manifest::load(&base.join(MANIFEST_FILE)).unwrap();
    m.completed()
        .map(|r| (r.id, std::fs::read(base.join(r.metrics.as_ref().unwrap())).unwrap()))
        .collect()
}

#[test]
fn rerun_gives_identical_metrics() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = deconvolution(a.path(), 2, true);
    let cb = deconvolution(b.path(), 2, true);
    run_experiment(&ca).unwrap();
    run_experiment(&cb).unwrap();
    let (ma, mb) = (metrics_bytes(&ca), metrics_bytes(&cb));
    assert_eq!(ma.len(), 2);
    assert_eq!(ma, mb);
}

#[test]
fn worker_count_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = deconvolution(a.path(), 3, false);
    let mut cb = deconvolution(b.path(), 3, false);
    cb.workers = Some(3);
    run_experiment(&ca).unwrap();
    run_experiment(&cb).unwrap();
    assert_eq!(metrics_bytes(&ca), metrics_bytes(&cb));
}

#[test]
fn resume_recomputes_only_missing_replicate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = deconvolution(dir.path(), 5, false);
    let first = run_experiment(&cfg).unwrap();
    assert_eq!((first.completed, first.reused), (5, 0));
    let before = metrics_bytes(&cfg);

    let rep3 = cfg.output_dir.join("rep_003");
    assert!(rep3.is_dir());
    std::fs::remove_dir_all(&rep3).unwrap();
    let stamp = |id: usize| {
        let m = Manifest::load(&cfg.output_dir.join(MANIFEST_FILE)).unwrap();
        let p = cfg.output_dir.join(m.replicate(id).unwrap().metrics.clone().unwrap());
        std::fs::metadata(p).unwrap().modified().unwrap()
    };
    let untouched: Vec<_> = [0, 1, 2, 4].iter().map(|&i| stamp(i)).collect();

    let second = run_experiment(&cfg).unwrap();
    assert_eq!((second.completed, second.reused), (5, 4));
    assert_eq!(metrics_bytes(&cfg), before);
    let after: Vec<_> = [0, 1, 2, 4].iter().map(|&i| stamp(i)).collect();
    assert_eq!(untouched, after);
}

#[test]
fn resume_rejects_changed_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = deconvolution(dir.path(), 1, false);
    run_experiment(&cfg).unwrap();
    let mut other = cfg.clone();
    other.budget.coverage_samples = 500;
    assert!(run_experiment(&other).is_err());
    let mut reseeded = cfg.clone();
    reseeded.seed += 1;
    assert!(run_experiment(&reseeded).is_err());
}

#[test]
fn closed_form_deconvolution_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = deconvolution(dir.path(), 1, false);
    let t = Instant::now();
    let report = run_experiment(&cfg).unwrap();
    assert!(t.elapsed().as_secs_f64() < 5.0, "took {:?}", t.elapsed());
    assert_eq!(report.completed, 1);
    let s = summarize(&report.manifest).unwrap();
    assert!(s.gaps.is_empty());
    assert!(s.groups.iter().any(|g| g.method == "ep" && g.metric == "coverage"));
    assert!(s.groups.iter().any(|g| g.method == "mean" && g.metric == "w2_to_ep"));
}

fn row(replicate: usize, method: &str, level: Option<f64>, value: f64) -> MetricRow {
    MetricRow {
        replicate,
        setting: String::new(),
        method: method.into(),
        metric: "coverage".into(),
        level,
        value,
    }
}

/// Hand-built manifest over the given per-replicate rows.
fn write_manifest(base: &Path, reps: &[Vec<MetricRow>]) -> PathBuf {
    let mut replicates = Vec::new();
    for (id, rows) in reps.iter().enumerate() {
        let rel = PathBuf::from(format!("m{id}.csv"));
        write_metrics_csv(&base.join(&rel), rows).unwrap();
        replicates.push(ReplicateResult {
            id,
            status: ReplicateStatus::Completed,
            seeds: BTreeMap::new(),
            artifacts: Vec::new(),
            metrics: Some(rel),
            timings: BTreeMap::new(),
            error: None,
        });
    }
    let m = Manifest {
        version: 1,
        experiment: ExperimentKind::Custom,
        seed: 0,
        config: PathBuf::from("config_echo.toml"),
        replicates,
    };
    let path = base.join(MANIFEST_FILE);
    m.save(&path).unwrap();
    path
}

#[test]
fn summary_matches_replicate_summary() {
    let dir = tempfile::tempdir().unwrap();
    let values = [[0.41, 0.88], [0.52, 0.91], [0.47, 0.79]];
    let reps: Vec<Vec<MetricRow>> = values
        .iter()
        .enumerate()
        .map(|(id, v)| vec![row(id, "ep", Some(0.5), v[0]), row(id, "ep", Some(0.9), v[1])])
        .collect();
    let path = write_manifest(dir.path(), &reps);
    let s = summarize(&path).unwrap();
    assert_eq!(s.replicates, vec![0, 1, 2]);
    assert_eq!(s.groups.len(), 2);
    for (k, level) in [0.5, 0.9].into_iter().enumerate() {
        let g = s.groups.iter().find(|g| g.level == Some(level)).unwrap();
        let col: Vec<f64> = values.iter().map(|v| v[k]).collect();
        assert_eq!(g.summary, replicate_summary(&col).unwrap());
    }
    let table = std::fs::read_to_string(dir.path().join("report_coverage.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(1).unwrap().starts_with(",ep,0.5,0.47,"));
}

#[test]
fn summary_reports_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let reps = vec![
        vec![row(0, "ep", Some(0.5), 0.5), row(0, "eup", Some(0.5), 0.6)],
        vec![row(1, "ep", Some(0.5), 0.4)],
    ];
    let s = summarize(&write_manifest(dir.path(), &reps)).unwrap();
    assert_eq!(s.gaps.len(), 1);
    assert_eq!(s.gaps[0].method, "eup");
    assert_eq!(s.gaps[0].missing_replicates, vec![1]);
}

#[test]
fn single_replicate_collapses_bands() {
    let dir = tempfile::tempdir().unwrap();
    let s = summarize(&write_manifest(dir.path(), &[vec![row(0, "ep", Some(0.5), 0.37)]])).unwrap();
    let g = &s.groups[0].summary;
    assert_eq!((g.median, g.q05, g.q95, g.n), (0.37, 0.37, 0.37, 1));
}

#[test]
fn empty_manifest_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(summarize(&write_manifest(dir.path(), &[])).is_err());
}
