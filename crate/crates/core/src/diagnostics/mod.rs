//! Comparison metrics between posterior approximations: coverage curves,
//! Gaussian and entropic 2-Wasserstein distances, whitening and replicate
//! summaries.

mod coverage;
mod summary;
mod transport;

pub use coverage::{default_levels, ellipsoidal_coverage, grid_coverage, CoverageCurve};
pub use summary::{read_metrics_csv, replicate_summary, write_metrics_csv, MetricRow, ReplicateSummary};
pub use transport::{
    default_epsilon, gaussian_w2, sinkhorn_w2, subsample, unwhiten, whiten, Whitening, SinkhornOptions,
    TransportDistance, TransportKind,
};

use nalgebra::DMatrix;

/// Ridge `1e-8 · trace / D` added to empirical covariances before they are
/// inverted or factored.
pub fn default_ridge(cov: &DMatrix<f64>) -> f64 {
    1e-8 * cov.trace() / cov.nrows().max(1) as f64
}
