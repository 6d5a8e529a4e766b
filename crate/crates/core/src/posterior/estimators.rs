use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ensemble::EmulatorEnsemble;
use super::grid::{Grid, GridDensity};
use super::problem::{InverseProblem, TargetRole};
use crate::error::{Error, Result};
use crate::gp::PointwiseSurrogate;
use crate::linalg::{compensated_sum, log_sum_exp};

/// Normalized density of `u ↦ π(u; f)` for a deterministic target map `f`.
pub fn density_for_target<F>(problem: &InverseProblem, grid: Arc<Grid>, target: F, label: &str) -> Result<GridDensity>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let logs: Vec<f64> = grid
        .points()
        .iter()
        .map(|u| problem.log_unnorm_density(u, &target(u)))
        .collect();
    GridDensity::from_log_values(grid, &logs, label)
}

/// Exact posterior on the grid through the problem's ground-truth map.
pub fn exact_density(problem: &InverseProblem, grid: Arc<Grid>) -> Result<GridDensity> {
    let logs = grid
        .points()
        .iter()
        .map(|u| problem.exact_log_density(u))
        .collect::<Result<Vec<f64>>>()?;
    GridDensity::from_log_values(grid, &logs, "exact")
}

/// Plug-in mean approximation: the surrogate's predictive mean used as if it
/// were the true target map.
pub fn plugin_mean_density(
    problem: &InverseProblem,
    surrogate: &dyn PointwiseSurrogate,
    grid: Arc<Grid>,
) -> Result<GridDensity> {
    check_output_dim(problem, surrogate)?;
    density_for_target(problem, grid, |u| surrogate.predict_pointwise(u).0, "mean")
}

fn check_output_dim(problem: &InverseProblem, surrogate: &dyn PointwiseSurrogate) -> Result<()> {
    if surrogate.output_dim() != problem.target_dim() {
        return Err(Error::Dimension {
            expected: problem.target_dim(),
            got: surrogate.output_dim(),
        });
    }
    Ok(())
}

/// Closed-form EUP for a forward model with Gaussian pointwise predictive
/// `f(u) ~ N(μ̂(u), diag ŝ²(u))`: `π₀(u) N(y | μ̂(u), Σ + diag ŝ²(u))`.
pub fn eup_density_forward_gaussian<F>(problem: &InverseProblem, grid: Arc<Grid>, moments: F) -> Result<GridDensity>
where
    F: Fn(&[f64]) -> (Vec<f64>, Vec<f64>),
{
    let logs = grid
        .points()
        .iter()
        .map(|u| {
            let (m, v) = moments(u);
            problem.log_eup_forward(u, &m, &v)
        })
        .collect::<Result<Vec<f64>>>()?;
    GridDensity::from_log_values(grid, &logs, "eup")
}

/// Closed-form EUP for a log-density surrogate with Gaussian pointwise law:
/// the log-normal mean `exp{μ̂(u) + ŝ²(u)/2}` (times the prior for a
/// log-likelihood target).
pub fn eup_density_logdensity_lognormal<F>(problem: &InverseProblem, grid: Arc<Grid>, moments: F) -> Result<GridDensity>
where
    F: Fn(&[f64]) -> (f64, f64),
{
    if problem.role() == TargetRole::ForwardModel {
        return Err(Error::input("log-normal EUP needs a log-density problem"));
    }
    let mut logs = Vec::with_capacity(grid.len());
    for u in grid.points() {
        let (m, v) = moments(&u);
        if !(v >= 0.0) {
            return Err(Error::input(format!("predictive variance must be nonnegative, got {v}")));
        }
        logs.push(problem.log_unnorm_density(&u, &[m + 0.5 * v]));
    }
    GridDensity::from_log_values(grid, &logs, "eup")
}

/// Grid EP: the average of per-trajectory normalized densities. Trajectories
/// with zero mass are dropped; the count is returned alongside.
pub fn ep_density_grid(ensemble: &EmulatorEnsemble) -> Result<(GridDensity, usize)> {
    let grid = ensemble.grid().clone();
    let log_z = ensemble.log_normalizers();
    let kept: Vec<usize> = (0..ensemble.n_members()).filter(|&i| log_z[i].is_finite()).collect();
    let dropped = ensemble.n_members() - kept.len();
    if dropped > 0 {
        log::warn!("EP: dropped {dropped} of {} trajectories with zero mass", ensemble.n_members());
    }
    if kept.is_empty() {
        return Err(Error::DegenerateDensity("every trajectory has zero mass".into()));
    }
    let lv = ensemble.log_values();
    let vals: Vec<f64> = (0..grid.len())
        .map(|g| compensated_sum(kept.iter().map(|&i| (lv[(i, g)] - log_z[i]).exp())) / kept.len() as f64)
        .collect();
    Ok((GridDensity::from_values(grid, &vals, "ep")?, dropped))
}

/// Grid EUP: average the unnormalized densities, then normalize once.
pub fn eup_density_grid(ensemble: &EmulatorEnsemble) -> Result<GridDensity> {
    let lv = ensemble.log_values();
    let m = ensemble.n_members() as f64;
    let logs: Vec<f64> = (0..ensemble.grid().len())
        .map(|g| {
            let col: Vec<f64> = lv.column(g).iter().copied().collect();
            log_sum_exp(&col) - m.ln()
        })
        .collect();
    GridDensity::from_log_values(ensemble.grid().clone(), &logs, "eup")
}

/// Pointwise decomposition `π̄ᵉᵖ − π̄ᵉᵘᵖ = E[π̂]·J + Cov[π̂, 1/Ẑ]` over the
/// empirical measure of the ensemble. Densities are scaled by one common
/// factor, which leaves every reported quantity unchanged.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapDecomposition {
    pub mean_density: Vec<f64>,
    pub jensen_gap: f64,
    pub cov: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub mean_normalizer: f64,
    pub dropped: usize,
}

impl GapDecomposition {
    pub fn max_abs_residual(&self) -> f64 {
        self.lhs.iter().zip(&self.rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

pub fn ep_eup_gap(ensemble: &EmulatorEnsemble) -> Result<GapDecomposition> {
    if ensemble.n_members() < 2 {
        return Err(Error::input("gap decomposition needs at least two trajectories"));
    }
    let log_z = ensemble.log_normalizers();
    let kept: Vec<usize> = (0..ensemble.n_members()).filter(|&i| log_z[i].is_finite()).collect();
    let dropped = ensemble.n_members() - kept.len();
    if kept.is_empty() {
        return Err(Error::DegenerateDensity("every trajectory has zero mass".into()));
    }
    let lv = ensemble.log_values();
    let shift = kept
        .iter()
        .flat_map(|&i| lv.row(i).iter().copied().collect::<Vec<_>>())
        .fold(f64::NEG_INFINITY, f64::max);
    let m = kept.len() as f64;
    let z: Vec<f64> = kept.iter().map(|&i| (log_z[i] - shift).exp()).collect();
    let inv_z: Vec<f64> = kept.iter().map(|&i| (shift - log_z[i]).exp()).collect();
    let mean_z = compensated_sum(z.iter().copied()) / m;
    let mean_inv_z = compensated_sum(inv_z.iter().copied()) / m;
    let jensen_gap = mean_inv_z - 1.0 / mean_z;

    let g = ensemble.grid().len();
    let mut mean_density = Vec::with_capacity(g);
    let mut cov = Vec::with_capacity(g);
    let mut lhs = Vec::with_capacity(g);
    let mut rhs = Vec::with_capacity(g);
    for j in 0..g {
        let p: Vec<f64> = kept.iter().map(|&i| (lv[(i, j)] - shift).exp()).collect();
        let mp = compensated_sum(p.iter().copied()) / m;
        let c = compensated_sum(p.iter().zip(&inv_z).map(|(a, b)| (a - mp) * (b - mean_inv_z))) / m;
        let ep = compensated_sum(kept.iter().map(|&i| (lv[(i, j)] - log_z[i]).exp())) / m;
        let eup = mp / mean_z;
        mean_density.push(mp);
        cov.push(c);
        lhs.push(ep - eup);
        rhs.push(mp * jensen_gap + c);
    }
    Ok(GapDecomposition {
        mean_density,
        jensen_gap,
        cov,
        lhs,
        rhs,
        mean_normalizer: mean_z,
        dropped,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct L1Bound {
    pub l1_distance: f64,
    pub bound: f64,
}

/// `‖π̄ᵉᵖ − π̄ᵉᵘᵖ‖₁ ≤ E[Ẑ]·J + ∫ |Cov[π̂(u), 1/Ẑ]| du` on the grid.
pub fn ep_eup_l1_bound(ensemble: &EmulatorEnsemble) -> Result<L1Bound> {
    let gap = ep_eup_gap(ensemble)?;
    let vol = ensemble.grid().cell_volume();
    Ok(L1Bound {
        l1_distance: vol * compensated_sum(gap.lhs.iter().map(|v| v.abs())),
        bound: gap.mean_normalizer * gap.jensen_gap + vol * compensated_sum(gap.cov.iter().map(|v| v.abs())),
    })
}

/// Trajectory weights implied by each approximation: uniform for EP, and
/// proportional to `Z(f)` for EUP.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CutMarginalCheck {
    pub ep_traj_weights: Vec<f64>,
    pub eup_traj_weights: Vec<f64>,
}

pub fn cut_marginal_check(ensemble: &EmulatorEnsemble) -> Result<CutMarginalCheck> {
    let m = ensemble.n_members();
    if m < 2 {
        return Err(Error::input("cut-marginal check needs at least two trajectories"));
    }
    let log_z = ensemble.log_normalizers();
    let total = log_sum_exp(&log_z);
    if !total.is_finite() {
        return Err(Error::DegenerateDensity("every trajectory has zero mass".into()));
    }
    Ok(CutMarginalCheck {
        ep_traj_weights: vec![1.0 / m as f64; m],
        eup_traj_weights: log_z.iter().map(|l| (l - total).exp()).collect(),
    })
}

/// Mixture of per-trajectory normalized densities with the given weights.
/// Zero-weight trajectories may be null.
pub fn weighted_mixture(ensemble: &EmulatorEnsemble, weights: &[f64], label: &str) -> Result<GridDensity> {
    if weights.len() != ensemble.n_members() {
        return Err(Error::Dimension {
            expected: ensemble.n_members(),
            got: weights.len(),
        });
    }
    let log_z = ensemble.log_normalizers();
    let lv = ensemble.log_values();
    let vals: Vec<f64> = (0..ensemble.grid().len())
        .map(|g| {
            compensated_sum(
                (0..weights.len())
                    .filter(|&i| weights[i] > 0.0)
                    .map(|i| weights[i] * (lv[(i, g)] - log_z[i]).exp()),
            )
        })
        .collect();
    GridDensity::from_values(ensemble.grid().clone(), &vals, label)
}

/// Ensemble-average losses of a candidate density `q` against the
/// per-trajectory posteriors: forward KL `KL(π̄(·; f) ‖ q)` and squared L₂.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EnsembleLoss {
    pub kl: f64,
    pub l2: f64,
}

pub fn ensemble_losses(ensemble: &EmulatorEnsemble, q: &GridDensity) -> Result<EnsembleLoss> {
    if **ensemble.grid() != *q.grid {
        return Err(Error::input("candidate density lives on a different grid"));
    }
    let log_z = ensemble.log_normalizers();
    let kept: Vec<usize> = (0..ensemble.n_members()).filter(|&i| log_z[i].is_finite()).collect();
    if kept.is_empty() {
        return Err(Error::DegenerateDensity("every trajectory has zero mass".into()));
    }
    let vol = q.grid.cell_volume();
    let lv = ensemble.log_values();
    let mut kl = Vec::with_capacity(kept.len());
    let mut l2 = Vec::with_capacity(kept.len());
    for &i in &kept {
        let mut k_terms = Vec::with_capacity(q.values.len());
        let mut l_terms = Vec::with_capacity(q.values.len());
        for (g, &qv) in q.values.iter().enumerate() {
            let lp = lv[(i, g)] - log_z[i];
            let p = lp.exp();
            if p > 0.0 {
                k_terms.push(if qv > 0.0 { p * (lp - qv.ln()) } else { f64::INFINITY });
            }
            l_terms.push((p - qv) * (p - qv));
        }
        kl.push(vol * compensated_sum(k_terms));
        l2.push(vol * compensated_sum(l_terms));
    }
    let m = kept.len() as f64;
    Ok(EnsembleLoss {
        kl: compensated_sum(kl) / m,
        l2: compensated_sum(l2) / m,
    })
}
