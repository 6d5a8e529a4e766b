use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::config::{ClipBound, Method};
use super::context::ReplicateCtx;
use super::linear::run_label;
use super::manifest::ArtifactKind;
use crate::diagnostics::{default_levels, grid_coverage};
use crate::error::Result;
use crate::gp::{
    fit_hyperparameters, latin_hypercube, log_det_bound, log_likelihood_supremum, BoundFn, ClippedEmulator,
    FitBounds, FitOptions, GaussianEmulator, KernelFamily,
};
use crate::posterior::{
    density_for_target, ep_density_grid, eup_density_logdensity_lognormal, exact_density, plugin_mean_density,
    sample_gp_ensemble, EmulatorEnsemble, Grid, GridDensity, InverseProblem, TrajectoryMethod,
};
use crate::problems::{build_vsem, VsemInstance};
use crate::samplers::{mwg, GriddedLaw, SamplerConfig, UProposal};

/// Number of monthly LAI observations.
const N_OBS: usize = 12;

pub(crate) fn run(ctx: &mut ReplicateCtx) -> Result<()> {
    let spec = ctx.config.vsem_spec();
    let seed = ctx.seed("problem", &[]);
    let inst = ctx.timed("problem", |_| build_vsem(&spec, seed))?;
    ctx.write_json(ArtifactKind::Problem, "problem.json", &inst.record())?;
    let nodes = ctx.config.budget.grid_nodes;
    let grid = Arc::new(Grid::midpoint(&spec.support(), &[nodes, nodes])?);
    let exact = ctx.timed("exact", |_| exact_density(&inst.log_posterior, grid.clone()))?;
    ctx.write_density("exact", &exact)?;

    for n in ctx.config.surrogate.design_sizes.clone() {
        let em = ctx.timed("fit", |ctx| fit_surrogate(ctx, &inst, n))?;
        ctx.write_json(ArtifactKind::Surrogate, &format!("surrogate_n{n}.json"), &em.to_record()?)?;
        let es = ctx.seed("ensemble", &[n as u64]);
        let budget = ctx.config.budget.clone();
        let base = ctx.timed("ensemble", |_| {
            sample_gp_ensemble(
                &inst.log_posterior,
                std::slice::from_ref(&em),
                grid.clone(),
                budget.ensemble_size,
                es,
                TrajectoryMethod::Rff {
                    n_features: budget.rff_features,
                },
                None,
            )
        })?;
        for clipped in ctx.config.surrogate.clipped.clone() {
            let setting = format!("{}-n{n}", if clipped { "clip" } else { "gp" });
            ctx.timed("approximations", |ctx| {
                setting_run(ctx, &inst, &grid, &exact, &em, &base, clipped, n, &setting)
            })?;
        }
    }
    Ok(())
}

fn fit_surrogate(ctx: &mut ReplicateCtx, inst: &VsemInstance, n: usize) -> Result<GaussianEmulator> {
    let support = inst.spec.support();
    let x = latin_hypercube(n, &support, ctx.seed("design", &[n as u64]))?;
    let y = DVector::from_iterator(
        n,
        x.row_iter()
            .map(|r| inst.forward.exact_log_density(&r.iter().copied().collect::<Vec<_>>()))
            .collect::<Result<Vec<f64>>>()?,
    );
    let fit = fit_hyperparameters(&x, &y, &fit_bounds(ctx, &x, &y), &fit_options(ctx, n))?;
    if fit.warning {
        log::warn!("replicate {}: GP fit at N = {n} did not improve on its starts", ctx.id);
    }
    Ok(fit.emulator)
}

/// Default bounds with the lengthscale box rescaled to the configured
/// multiples of each input's design range.
pub(crate) fn fit_bounds(ctx: &ReplicateCtx, x: &DMatrix<f64>, y: &DVector<f64>) -> FitBounds {
    let mut b = FitBounds::default_for(x, y);
    let (lo, hi) = ctx.config.surrogate.lengthscale_range;
    for (j, ls) in b.lengthscales.iter_mut().enumerate() {
        let col = x.column(j);
        let range = col.max() - col.min();
        let range = if range > 0.0 { range } else { 1.0 };
        *ls = (lo * range, hi * range);
    }
    b
}

pub(crate) fn fit_options(ctx: &mut ReplicateCtx, n: usize) -> FitOptions {
    FitOptions {
        family: KernelFamily::SquaredExponential,
        restarts: ctx.config.surrogate.restarts,
        seed: ctx.seed("fit", &[n as u64]),
        ..FitOptions::default()
    }
}

fn bound_fn(problem: &InverseProblem, sigma2: f64, kind: ClipBound) -> BoundFn {
    let p = problem.clone();
    Arc::new(move |u: &[f64]| {
        let lp = p.log_prior(u);
        match kind {
            ClipBound::Supremum => log_likelihood_supremum(N_OBS, sigma2, lp),
            ClipBound::LogDet => log_det_bound(N_OBS, sigma2, lp),
        }
    })
}

#[allow(clippy::too_many_arguments)]
fn setting_run(
    ctx: &mut ReplicateCtx,
    inst: &VsemInstance,
    grid: &Arc<Grid>,
    exact: &GridDensity,
    em: &GaussianEmulator,
    base: &EmulatorEnsemble,
    clipped: bool,
    n: usize,
    setting: &str,
) -> Result<()> {
    let lp = &inst.log_posterior;
    let (mean, eup, ensemble) = if clipped {
        let bound = bound_fn(lp, inst.spec.sigma2, ctx.config.surrogate.clip_bound);
        let clip = ClippedEmulator::new(em.clone(), bound.clone());
        let mean = density_for_target(lp, grid.clone(), |u| vec![clip.predict_mean(u)], "mean")?;
        let eup = density_for_target(lp, grid.clone(), |u| vec![clip.log_exp_mean(u)], "eup")?;
        // For a log-posterior target the ensemble's log values are the drawn
        // surrogate values themselves, so clipping them clips the draws.
        let bounds: Vec<f64> = grid.points().iter().map(|u| bound(u)).collect();
        let lv = base.log_values();
        let capped = DMatrix::from_fn(lv.nrows(), lv.ncols(), |i, j| lv[(i, j)].min(bounds[j]));
        (mean, eup, EmulatorEnsemble::from_log_values(grid.clone(), capped, base.seeds().to_vec())?)
    } else {
        let mean = plugin_mean_density(lp, em, grid.clone())?;
        let eup = eup_density_logdensity_lognormal(lp, grid.clone(), |u| em.predict(u))?;
        (mean, eup, base.clone())
    };
    let (ep, dropped) = ep_density_grid(&ensemble)?;
    ctx.metric(setting, "ep", "dropped_trajectories", None, dropped as f64);
    let levels = default_levels();
    for d in [&mean, &eup, &ep] {
        let label = d.label.clone();
        ctx.coverage(setting, &grid_coverage(exact, d, &levels, &label)?);
        ctx.metric(setting, &label, "tv_to_exact", None, total_variation(d, exact));
        ctx.write_density(&format!("{setting}_{label}"), d)?;
    }

    if ctx.config.samplers.methods.contains(&Method::Mwg) {
        let budget = ctx.config.budget.clone();
        let window = (budget.grid_nodes / 20).max(1);
        let start = ep
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| grid.point(i))
            .unwrap_or_else(|| grid.point(0));
        for (i, &rho) in ctx.config.samplers.rho.clone().iter().enumerate() {
            let seed = ctx.seed("sampler", &[Method::Mwg as u64, n as u64, clipped as u64, i as u64]);
            let proposal = UProposal::Grid {
                grid: (**grid).clone(),
                window,
            };
            let cfg = SamplerConfig::new(budget.iterations, budget.burn_in(), proposal, seed).with_rho(rho);
            let chain = mwg(&GriddedLaw::Ensemble(&ensemble), &start, None, &cfg)?;
            let hist = histogram(grid, &chain.samples);
            let label = run_label(Method::Mwg, rho);
            ctx.metric(setting, &label, "tv_to_ep", None, total_variation(&hist, &ep));
            ctx.metric(setting, &label, "u_acceptance", None, chain.u_acceptance);
            ctx.write_chain(&format!("{setting}_{label}"), &chain, &chain.samples.clone())?;
        }
    }
    Ok(())
}

/// Total-variation distance between two densities on the same grid.
pub(crate) fn total_variation(a: &GridDensity, b: &GridDensity) -> f64 {
    let (ma, mb) = (a.masses(), b.masses());
    let (ta, tb) = (ma.iter().sum::<f64>(), mb.iter().sum::<f64>());
    0.5 * ma.iter().zip(&mb).map(|(x, y)| (x / ta - y / tb).abs()).sum::<f64>()
}

/// Normalized histogram of grid-valued draws.
fn histogram(grid: &Arc<Grid>, samples: &DMatrix<f64>) -> GridDensity {
    let mut counts = vec![0.0; grid.len()];
    for row in samples.row_iter() {
        let u: Vec<f64> = row.iter().copied().collect();
        if let Some(i) = grid.locate(&u) {
            counts[i] += 1.0;
        }
    }
    GridDensity::from_values(grid.clone(), &counts, "mwg").expect("chain draws lie on the grid")
}
