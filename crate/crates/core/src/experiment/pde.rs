use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::config::{Budget, Method};
use super::context::ReplicateCtx;
use super::linear::run_label;
use super::manifest::ArtifactKind;
use super::vsem::{fit_bounds, fit_options};
use crate::diagnostics::{
    default_epsilon, default_levels, ellipsoidal_coverage, sinkhorn_w2, subsample, SinkhornOptions, Whitening,
};
use crate::error::{Error, Result};
use crate::gp::optim::nelder_mead;
use crate::gp::{fit_hyperparameters, latin_hypercube, GaussianEmulator, RffSampler};
use crate::linalg::{psd_factor, sample_moments};
use crate::posterior::{InverseProblem, LogDensityFn};
use crate::problems::{build_pde_problem, PdeInstance};
use crate::rng::derive_seed;
use crate::samplers::{cpm_eup, mwmc, rkpcn, rw_mh, ChainOutput, JitLaw, SamplerConfig, TrajectoryLaw, UProposal};
use crate::stats::norm_quantile;

/// Per-coordinate random-walk scale of pilot chains.
const PILOT_SCALE: f64 = 0.1;

pub(crate) fn run(ctx: &mut ReplicateCtx) -> Result<()> {
    let spec = ctx.config.pde_spec();
    let seed = ctx.seed("problem", &[]);
    let inst = ctx.timed("problem", |_| build_pde_problem(&spec, seed))?;
    ctx.write_json(ArtifactKind::Problem, "problem.json", &inst.record())?;
    let prob = &inst.problem;
    let d = prob.dim();
    let budget = ctx.config.budget.clone();

    let exact_ld = |u: &[f64]| prob.exact_log_density(u).unwrap_or(f64::NEG_INFINITY);
    let start = mode(&exact_ld, &[vec![0.0; d]]);
    let es = ctx.seed("sampler", &[0]);
    let exact = ctx.timed("exact", |_| {
        two_phase(|cfg, u0| rw_mh(exact_ld, u0, cfg), &start, &budget, es)
    })?;
    ctx.write_chain("exact", &exact, &exact.samples)?;

    for n in ctx.config.surrogate.design_sizes.clone() {
        let ems = ctx.timed("fit", |ctx| fit_surrogates(ctx, &inst, n))?;
        let records = ems.iter().map(|e| e.to_record()).collect::<Result<Vec<_>>>()?;
        ctx.write_json(ArtifactKind::Surrogate, &format!("surrogate_n{n}.json"), &records)?;
        ctx.timed("samplers", |ctx| design_run(ctx, prob, &ems, &exact.samples, &start, n))?;
    }
    Ok(())
}

/// Latin hypercube on the unit cube pushed through the standard normal
/// quantile, kept inside the truncated prior support.
fn fit_surrogates(ctx: &mut ReplicateCtx, inst: &PdeInstance, n: usize) -> Result<Vec<GaussianEmulator>> {
    let d = inst.problem.dim();
    let unit = latin_hypercube(n, &vec![(0.0, 1.0); d], ctx.seed("design", &[n as u64]))?;
    let alpha = inst.spec.truncation();
    let x = unit.map(|p| norm_quantile(p).clamp(-alpha, alpha));
    let outputs = x
        .row_iter()
        .map(|r| inst.forward_map.observe(&r.iter().copied().collect::<Vec<_>>()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let p = outputs.first().map_or(0, |o| o.len());
    let mut ems = Vec::with_capacity(p);
    for k in 0..p {
        let y = DVector::from_iterator(n, outputs.iter().map(|o| o[k]));
        let mut opts = fit_options(ctx, n);
        opts.seed = ctx.seed("fit", &[n as u64, k as u64]);
        let fit = fit_hyperparameters(&x, &y, &fit_bounds(ctx, &x, &y), &opts)?;
        if fit.warning {
            log::warn!("replicate {}: GP fit for output {k} at N = {n} did not improve on its starts", ctx.id);
        }
        ems.push(fit.emulator);
    }
    Ok(ems)
}

fn design_run(
    ctx: &mut ReplicateCtx,
    prob: &InverseProblem,
    ems: &[GaussianEmulator],
    exact: &DMatrix<f64>,
    start: &[f64],
    n: usize,
) -> Result<()> {
    let setting = format!("n{n}");
    let budget = ctx.config.budget.clone();
    let d = prob.dim();
    let mut sets: Vec<(String, DMatrix<f64>)> = Vec::new();

    let mean_ld = |u: &[f64]| {
        let m: Vec<f64> = ems.iter().map(|e| e.predict_mean(u)).collect();
        prob.log_unnorm_density(u, &m)
    };
    let seed = ctx.seed("sampler", &[1, n as u64]);
    let u0 = mode(&mean_ld, &[start.to_vec()]);
    let mean = two_phase(|cfg, u| rw_mh(mean_ld, u, cfg), &u0, &budget, seed)?;
    ctx.write_chain(&format!("{setting}_mean"), &mean, &mean.samples)?;
    sets.push(("mean".into(), mean.samples.clone()));

    let eup_ld = |u: &[f64]| {
        let (m, v): (Vec<f64>, Vec<f64>) = ems.iter().map(|e| e.predict(u)).unzip();
        prob.log_eup_forward(u, &m, &v).unwrap_or(f64::NEG_INFINITY)
    };
    let seed = ctx.seed("sampler", &[2, n as u64]);
    let eup_start = mode(&eup_ld, &[start.to_vec()]);
    let eup = two_phase(|cfg, u| rw_mh(eup_ld, u, cfg), &eup_start, &budget, seed)?;
    ctx.write_chain(&format!("{setting}_eup"), &eup, &eup.samples)?;
    sets.push(("eup".into(), eup.samples.clone()));

    let law = TrajectoryLaw::JustInTime(JitLaw {
        problem: prob,
        outputs: ems,
        clip: None,
    });
    let rhos = ctx.config.samplers.rho.clone();
    let methods = ctx.config.samplers.methods.clone();
    for method in methods.iter().copied().filter(|m| matches!(m, Method::Rkpcn | Method::CpmEup)) {
        for (i, &rho) in rhos.iter().enumerate() {
            let seed = ctx.seed("sampler", &[3 + method as u64, n as u64, i as u64]);
            let u_steps = ctx.config.samplers.u_steps;
            let chain = two_phase(
                |cfg, u| {
                    let mut c = cfg.clone().with_rho(rho);
                    c.u_steps = u_steps;
                    match method {
                        Method::Rkpcn => rkpcn(&law, u, None, &c),
                        _ => cpm_eup(&law, u, None, &c),
                    }
                },
                &eup_start,
                &budget,
                seed,
            )?;
            let label = run_label(method, rho);
            ctx.metric(&setting, &label, "u_acceptance", None, chain.u_acceptance);
            ctx.write_chain(&format!("{setting}_{label}"), &chain, &chain.samples)?;
            sets.push((label, chain.samples.clone()));
        }
    }

    let baseline = if methods.contains(&Method::Mwmc) {
        let (_, cov) = sample_moments(&eup.samples);
        let inner = SamplerConfig::new(
            budget.inner_iterations,
            budget.inner_iterations / 2,
            UProposal::Preconditioned {
                factor: psd_factor(&cov),
                scale: 2.38 / (d as f64).sqrt(),
            },
            ctx.seed("sampler", &[7, n as u64]),
        );
        let rff_seed = ctx.seed("rff", &[n as u64]);
        let traj_seed = ctx.seed("trajectories", &[n as u64]);
        let samplers = ems
            .iter()
            .enumerate()
            .map(|(k, e)| RffSampler::new(e.kernel(), budget.rff_features, derive_seed(rff_seed, &[k as u64])))
            .collect::<Result<Vec<_>>>()?;
        let trajectory = |s: usize| -> Result<LogDensityFn> {
            let paths = samplers
                .iter()
                .zip(ems)
                .enumerate()
                .map(|(k, (smp, e))| smp.trajectory(e, derive_seed(traj_seed, &[s as u64, k as u64])))
                .collect::<Result<Vec<_>>>()?;
            let p = prob.clone();
            Ok(Arc::new(move |u: &[f64]| {
                let f: Vec<f64> = paths.iter().map(|t| t.eval(u)).collect();
                p.log_unnorm_density(u, &f)
            }))
        };
        let chain = mwmc(trajectory, budget.trajectories, budget.keep_per_trajectory, &eup_start, &inner)?;
        ctx.metric(&setting, "mwmc", "skipped_trajectories", None, chain.flags.skipped_trajectories as f64);
        ctx.write_chain(&format!("{setting}_mwmc"), &chain, &chain.samples)?;
        sets.push(("mwmc".into(), chain.samples.clone()));
        Some(chain.samples)
    } else {
        None
    };

    let levels = default_levels();
    for (label, s) in &sets {
        ctx.coverage(&setting, &ellipsoidal_coverage(exact, s, &levels, label)?);
    }

    if let Some(base) = baseline {
        let pts = budget.sinkhorn_points;
        let b = subsample(&base, pts, ctx.seed("subsample", &[n as u64, 0]));
        // One ε per design size, from the whitened baseline points.
        let eps = default_epsilon(&Whitening::from_samples(&b)?.apply(&b));
        let opts = SinkhornOptions {
            epsilon: Some(eps),
            ..SinkhornOptions::default()
        };
        let mut others: Vec<(String, &DMatrix<f64>)> = vec![("exact".into(), exact)];
        others.extend(sets.iter().filter(|(l, _)| l != "mwmc").map(|(l, s)| (l.clone(), s)));
        for (k, (label, s)) in others.into_iter().enumerate() {
            let a = subsample(s, pts, ctx.seed("subsample", &[n as u64, k as u64 + 1]));
            let dist = sinkhorn_w2(&b, &a, &opts)?;
            if !dist.converged {
                log::warn!("replicate {}: Sinkhorn for {label} at N = {n} did not converge", ctx.id);
            }
            ctx.metric(&setting, &label, "sinkhorn_to_mwmc", Some(eps), dist.value);
        }
    }
    Ok(())
}

/// Maximize a log density by Nelder-Mead from the best of `starts`.
fn mode(log_density: &dyn Fn(&[f64]) -> f64, starts: &[Vec<f64>]) -> Vec<f64> {
    let x0 = starts
        .iter()
        .max_by(|a, b| log_density(a).total_cmp(&log_density(b)))
        .cloned()
        .unwrap_or_default();
    let m = nelder_mead(|u| -log_density(u), &x0, 0.1, 4000, 1e-10);
    if log_density(&m.x) >= log_density(&x0) {
        m.x
    } else {
        x0
    }
}

/// Pilot chain with a diagonal random walk, then the main chain with a
/// proposal preconditioned by the pilot's sample covariance. Both adapt a
/// global scale during burn-in.
fn two_phase<F>(run: F, u0: &[f64], budget: &Budget, seed: u64) -> Result<ChainOutput>
where
    F: Fn(&SamplerConfig, &[f64]) -> Result<ChainOutput>,
{
    let d = u0.len();
    let n_pilot = (budget.iterations / 4).max(2000);
    let pilot_cfg = SamplerConfig::new(
        n_pilot,
        n_pilot / 2,
        UProposal::random_walk(vec![PILOT_SCALE; d]),
        derive_seed(seed, &[0]),
    );
    let pilot = run(&pilot_cfg, u0)?;
    if pilot.n_samples() < 2 {
        return Err(Error::Numerical("pilot chain kept fewer than two draws".into()));
    }
    let (_, cov) = sample_moments(&pilot.samples);
    let ridge = 1e-10 * (cov.trace() / d as f64).max(f64::MIN_POSITIVE);
    let factor = psd_factor(&(cov + DMatrix::identity(d, d) * ridge));
    let last: Vec<f64> = pilot.samples.row(pilot.n_samples() - 1).iter().copied().collect();
    let cfg = SamplerConfig::new(
        budget.iterations,
        budget.burn_in(),
        UProposal::Preconditioned {
            factor,
            scale: 2.38 / (d as f64).sqrt(),
        },
        derive_seed(seed, &[1]),
    )
    .with_thinning(budget.thinning());
    run(&cfg, &last)
}
