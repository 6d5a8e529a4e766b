//! Gaussian-process emulators and trajectory samplers.

mod clip;
mod design;
mod emulator;
mod fit;
mod jit;
mod kernel;
pub(crate) mod optim;
mod rff;

pub use clip::{clipped_exp_mean, clipped_mean, log_det_bound, log_likelihood_supremum, BoundFn, ClippedEmulator};
pub use design::latin_hypercube;
pub use emulator::{EmulatorRecord, GaussianEmulator, MeanFn, MultiOutputEmulator};
pub use fit::{fit_hyperparameters, FitBounds, FitOptions, FitResult};
pub use jit::{jit_bivariate, BivariateLaw};
pub use kernel::{matrix_from_rows, rows_of, Kernel, KernelFamily};
pub use rff::{RffSampler, RffTrajectory};

/// Anything that yields a pointwise Gaussian predictive law per output.
pub trait PointwiseSurrogate: Send + Sync {
    fn output_dim(&self) -> usize;
    /// Predictive means and variances, one entry per output.
    fn predict_pointwise(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>);
}
