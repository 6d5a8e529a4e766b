use std::sync::Arc;

use nalgebra::DVector;

use super::config::{ExperimentKind, Method};
use super::context::{gaussian_draws, ReplicateCtx};
use super::manifest::ArtifactKind;
use crate::diagnostics::{default_levels, ellipsoidal_coverage, gaussian_w2};
use crate::error::{Error, Result};
use crate::linalg::sample_moments;
use crate::linear_gaussian::{
    ep_moments, eup_moments, exact_posterior, plugin_moments, GaussianMoments, LinearGaussianProblem,
    LinearSurrogate, ReducedLinearModel,
};
use crate::problems::build_deconvolution;
use crate::samplers::{cpm_eup, rkpcn, FiniteGaussianLaw, SamplerConfig, TrajectoryLaw, UProposal};

/// Eigenvalues of `C₀` below this fraction of the largest are dropped from
/// the sampling coordinates.
const PRIOR_RANK_TOL: f64 = 1e-10;

/// Label of a sampler run: `independent-cut` for RKpCN at ρ = 0, otherwise
/// `<method>-rho<ρ>`.
pub(crate) fn run_label(method: Method, rho: f64) -> String {
    if method == Method::Rkpcn && rho == 0.0 {
        "independent-cut".to_string()
    } else {
        format!("{}-rho{rho}", method.name())
    }
}

pub(crate) fn run(ctx: &mut ReplicateCtx) -> Result<()> {
    let (prob, sur) = match ctx.config.experiment {
        ExperimentKind::Deconvolution => {
            let spec = ctx.config.deconvolution_spec();
            let (ps, ss) = (ctx.seed("problem", &[]), ctx.seed("surrogate", &[]));
            let inst = ctx.timed("problem", |_| build_deconvolution(&spec, ps))?;
            ctx.write_json(ArtifactKind::Problem, "problem.json", &inst.record())?;
            let sur = inst.surrogate(ss)?;
            ctx.write_json(ArtifactKind::Surrogate, "surrogate.json", &sur)?;
            (inst.problem, sur)
        }
        ExperimentKind::Custom => {
            let custom = ctx
                .config
                .custom
                .as_ref()
                .ok_or_else(|| Error::input("custom experiments need a [custom] table"))?;
            custom.build()?
        }
        other => return Err(Error::input(format!("{other:?} is not a linear-Gaussian experiment"))),
    };

    let closed = ctx.timed("closed-form", |_| {
        Ok::<_, Error>([
            ("exact", exact_posterior(&prob)?),
            ("ep", ep_moments(&prob, &sur)?),
            ("eup", eup_moments(&prob, &sur)?),
            ("mean", plugin_moments(&prob, &sur)?),
        ])
    })?;
    for (label, m) in &closed {
        ctx.write_moments(label, m)?;
    }
    let ep = closed[1].1.clone();
    for (label, m) in closed.iter().filter(|(l, _)| *l != "ep") {
        let d = gaussian_w2(m, &ep)?;
        ctx.metric("", label, "w2_to_ep", None, d.value);
    }

    coverage(ctx, &closed)?;

    let wanted: Vec<Method> = ctx
        .config
        .samplers
        .methods
        .iter()
        .copied()
        .filter(|m| matches!(m, Method::Rkpcn | Method::CpmEup))
        .collect();
    if !wanted.is_empty() {
        let eup = closed[2].1.clone();
        ctx.timed("samplers", |ctx| samplers(ctx, &prob, &sur, &wanted, &ep, &eup))?;
    }
    Ok(())
}

/// Joint ellipsoidal coverage of each approximation relative to the exact
/// posterior, from Gaussian draws of every law.
fn coverage(ctx: &mut ReplicateCtx, closed: &[(&str, GaussianMoments); 4]) -> Result<()> {
    let n = ctx.config.budget.coverage_samples;
    let ref_seed = ctx.seed("coverage", &[0]);
    let reference = gaussian_draws(&closed[0].1, n, ref_seed);
    let levels = default_levels();
    for (k, (label, m)) in closed.iter().enumerate().skip(1) {
        let s = ctx.seed("coverage", &[k as u64]);
        let approx = gaussian_draws(m, n, s);
        let curve = ctx.timed("coverage", |_| ellipsoidal_coverage(&reference, &approx, &levels, label))?;
        ctx.coverage("", &curve);
    }
    Ok(())
}

fn samplers(
    ctx: &mut ReplicateCtx,
    prob: &LinearGaussianProblem,
    sur: &LinearSurrogate,
    methods: &[Method],
    ep: &GaussianMoments,
    eup: &GaussianMoments,
) -> Result<()> {
    let model = Arc::new(ReducedLinearModel::new(prob, sur, PRIOR_RANK_TOL)?);
    let k = model.dim();
    let m2 = model.clone();
    let law = FiniteGaussianLaw::new(
        DVector::zeros(model.bias_factor.nrows()),
        model.bias_factor.clone(),
        Arc::new(move |z: &[f64], xi: &DVector<f64>| m2.log_density(z, xi)),
    )?;
    let proposal = UProposal::Preconditioned {
        factor: model.posterior_factor()?,
        scale: 2.38 / (k as f64).sqrt(),
    };
    let budget = ctx.config.budget.clone();
    let rhos = ctx.config.samplers.rho.clone();
    for &method in methods {
        for (i, &rho) in rhos.iter().enumerate() {
            let seed = ctx.seed("sampler", &[method as u64, i as u64]);
            let mut cfg = SamplerConfig::new(budget.iterations, budget.burn_in(), proposal.clone(), seed).with_rho(rho);
            cfg.u_steps = ctx.config.samplers.u_steps;
            let z0 = vec![0.0; k];
            let tl = TrajectoryLaw::Finite(&law);
            let chain = match method {
                Method::Rkpcn => rkpcn(&tl, &z0, None, &cfg)?,
                Method::CpmEup => cpm_eup(&tl, &z0, None, &cfg)?,
                _ => unreachable!("filtered by the caller"),
            };
            let u = model.to_u(&chain.samples);
            let (mean, cov) = sample_moments(&u);
            let fit = GaussianMoments { mean, cov };
            let label = run_label(method, rho);
            ctx.metric("", &label, "w2_to_ep", None, gaussian_w2(&fit, ep)?.value);
            if method == Method::CpmEup {
                ctx.metric("", &label, "w2_to_eup", None, gaussian_w2(&fit, eup)?.value);
            }
            ctx.metric("", &label, "u_acceptance", None, chain.u_acceptance);
            ctx.write_chain(&label, &chain, &u)?;
        }
    }
    Ok(())
}
