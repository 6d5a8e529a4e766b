use rayon::prelude::*;

use super::config::{ChainFlags, ChainOutput, SamplerConfig};
use super::mh::rw_mh;
use crate::error::{Error, Result};
use crate::posterior::LogDensityFn;
use crate::rng::derive_seed;

/// Metropolis within Monte Carlo: draw `n_traj` trajectories, run an inner
/// random-walk chain on each trajectory's density and keep `m_keep` draws per
/// trajectory.
///
/// `trajectory(s)` returns the log unnormalized density of trajectory `s`.
/// The inner chain's thinning is overridden so that exactly `m_keep` draws
/// survive; inner seeds are `derive_seed(inner.seed, [s])`. Trajectories whose
/// density vanishes at `u0` are skipped with a warning.
pub fn mwmc<F>(trajectory: F, n_traj: usize, m_keep: usize, u0: &[f64], inner: &SamplerConfig) -> Result<ChainOutput>
where
    F: Fn(usize) -> Result<LogDensityFn> + Sync,
{
    if n_traj == 0 || m_keep == 0 {
        return Err(Error::input("MwMC needs at least one trajectory and one retained draw"));
    }
    inner.validate(u0.len())?;
    let kept_span = inner.n_iterations - inner.burn_in;
    if kept_span < m_keep {
        return Err(Error::input(format!(
            "inner chain keeps {kept_span} post-burn-in iterations, fewer than {m_keep}"
        )));
    }
    let mut cfg = inner.clone();
    cfg.thinning = kept_span / m_keep;

    let runs: Vec<Result<Option<ChainOutput>>> = (0..n_traj)
        .into_par_iter()
        .map(|s| {
            let log_density = trajectory(s)?;
            let mut c = cfg.clone();
            c.seed = derive_seed(inner.seed, &[s as u64]);
            match rw_mh(|u| log_density(u), u0, &c) {
                Ok(out) => Ok(Some(out)),
                Err(Error::Initialization(msg)) => {
                    log::warn!("MwMC trajectory {s} skipped: {msg}");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();

    let d = u0.len();
    let mut rows = Vec::with_capacity(n_traj * m_keep * d);
    let mut tags = Vec::with_capacity(n_traj * m_keep);
    let mut trace = Vec::new();
    let mut flags = ChainFlags::default();
    let (mut acc, mut scale, mut n_ok) = (0.0, 0.0, 0usize);
    for (s, run) in runs.into_iter().enumerate() {
        let Some(out) = run? else {
            flags.skipped_trajectories += 1;
            continue;
        };
        for row in out.samples.row_iter().take(m_keep) {
            rows.extend(row.iter());
            tags.push(s);
        }
        trace.extend_from_slice(&out.log_density_trace);
        acc += out.u_acceptance;
        scale += out.scale_factor;
        n_ok += 1;
    }
    if n_ok == 0 {
        return Err(Error::Initialization("every MwMC trajectory was skipped".into()));
    }
    Ok(ChainOutput {
        sampler: "mwmc".into(),
        samples: nalgebra::DMatrix::from_row_slice(tags.len(), d, &rows),
        trajectory_tags: Some(tags),
        u_acceptance: acc / n_ok as f64,
        f_acceptance: None,
        log_density_trace: trace,
        moves: Vec::new(),
        scale_factor: scale / n_ok as f64,
        flags,
        seed: inner.seed,
        config: cfg,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::samplers::config::UProposal;

    #[test]
    fn single_deterministic_trajectory_is_plain_mh() {
        let target: LogDensityFn = Arc::new(|u: &[f64]| -0.5 * (u[0] - 1.0).powi(2));
        let inner = SamplerConfig::new(2000, 1000, UProposal::random_walk(vec![1.0]), 4);
        let t = target.clone();
        let out = mwmc(move |_| Ok(t.clone()), 1, 10, &[0.0], &inner).unwrap();
        let mut c = inner.clone().with_thinning(100);
        c.seed = derive_seed(4, &[0]);
        let direct = rw_mh(|u| target(u), &[0.0], &c).unwrap();
        assert_eq!(out.samples, direct.samples);
    }

    #[test]
    fn tags_are_uniform_and_skips_are_counted() {
        let inner = SamplerConfig::new(400, 200, UProposal::random_walk(vec![0.5]), 8);
        let out = mwmc(
            |s| {
                let shift = s as f64 * 0.1;
                let f: LogDensityFn = if s == 3 {
                    Arc::new(|_| f64::NEG_INFINITY)
                } else {
                    Arc::new(move |u: &[f64]| -0.5 * (u[0] - shift).powi(2))
                };
                Ok(f)
            },
            6,
            5,
            &[0.0],
            &inner,
        )
        .unwrap();
        assert_eq!(out.flags.skipped_trajectories, 1);
        let tags = out.trajectory_tags.unwrap();
        assert_eq!(tags.len(), 25);
        for s in [0, 1, 2, 4, 5] {
            assert_eq!(tags.iter().filter(|&&t| t == s).count(), 5);
        }
    }
}
