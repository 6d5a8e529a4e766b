//! Posterior approximations built from a probabilistic surrogate: plug-in
//! mean, expected posterior (EP), expected unnormalized posterior (EUP), and
//! the gap diagnostics relating the last two.

mod approximation;
mod ensemble;
mod estimators;
mod grid;
mod problem;

pub use approximation::{Approximation, PosteriorApproximation};
pub use ensemble::{sample_gp_ensemble, EmulatorEnsemble, TrajectoryMethod};
pub use estimators::{
    cut_marginal_check, density_for_target, ensemble_losses, ep_density_grid, ep_eup_gap, ep_eup_l1_bound,
    eup_density_forward_gaussian, eup_density_grid, eup_density_logdensity_lognormal, exact_density,
    plugin_mean_density, weighted_mixture, CutMarginalCheck, EnsembleLoss, GapDecomposition, L1Bound,
};
pub use grid::{Grid, GridDensity, GridDensityMeta};
pub use problem::{uniform_box_log_prior, InverseProblem, LogDensityFn, TargetFn, TargetRole};
