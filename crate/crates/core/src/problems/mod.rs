//! Benchmark inverse problems: linear deconvolution, the VSEM ecosystem
//! model, and a one-dimensional elliptic PDE with a KL-reduced prior.

mod deconvolution;
mod pde;
mod vsem;

pub use deconvolution::{build_deconvolution, DeconvolutionInstance, DeconvolutionRecord, DeconvolutionSpec};
pub use pde::{
    build_kl_prior, build_pde_problem, pde_solve_bvp, KlPrior, PdeForward, PdeInstance, PdeRecord, PdeSpec,
};
pub use vsem::{
    build_vsem, monthly_means, synthetic_driver, vsem_forward, vsem_solve, vsem_step, VsemInstance, VsemParams,
    VsemRanges, VsemRecord, VsemSpec, VsemTrajectory, DAYS_PER_MONTH,
};
