use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;

use super::config::{ChainOutput, MoveRecord, SamplerConfig, UProposal};
use super::kernel::{acceptance, grid_jump, ChainRecorder};
use super::mh::FiniteGaussianLaw;
use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::posterior::{EmulatorEnsemble, Grid};
use crate::rng::{self, SeededRng};

/// Trajectory law of a gridded problem, as needed by Metropolis-within-Gibbs.
#[derive(Clone, Copy, Debug)]
pub enum GriddedLaw<'a> {
    /// Uniform law over the members of a finite ensemble.
    Ensemble(&'a EmulatorEnsemble),
    /// Gaussian law of the grid values; `u` ranges over `grid`'s nodes.
    Gaussian { law: &'a FiniteGaussianLaw, grid: &'a Arc<Grid> },
}

impl GriddedLaw<'_> {
    pub fn grid(&self) -> &Arc<Grid> {
        match self {
            GriddedLaw::Ensemble(e) => e.grid(),
            GriddedLaw::Gaussian { grid, .. } => grid,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GriddedTrajectory {
    Member(usize),
    Values(DVector<f64>),
}

/// MwG state: grid node of `u`, the trajectory, its log densities on the
/// grid (for `Values`) and its log normalizer.
#[derive(Clone, Debug)]
pub struct MwgState {
    pub index: usize,
    pub trajectory: GriddedTrajectory,
    log_values: Vec<f64>,
    /// Per-member log normalizers of an ensemble law.
    member_norms: Vec<f64>,
    pub log_norm: f64,
    pub log_density: f64,
    pub iteration: usize,
}

/// Outcome of one MwG step.
#[derive(Clone, Copy, Debug)]
pub struct MwgStep {
    pub f_accepted: bool,
    pub f_alpha: f64,
    pub underflow: bool,
    pub u_move: MoveRecord,
}

fn log_values_of(law: &GriddedLaw, norms: &[f64], t: &GriddedTrajectory) -> (Vec<f64>, f64) {
    match (law, t) {
        (GriddedLaw::Ensemble(_), GriddedTrajectory::Member(m)) => (Vec::new(), norms[*m]),
        (GriddedLaw::Gaussian { law, grid }, GriddedTrajectory::Values(f)) => {
            let lv: Vec<f64> = (0..grid.len()).map(|g| law.log_density(&grid.point(g), f)).collect();
            let z = log_sum_exp(&lv) + grid.cell_volume().ln();
            (lv, z)
        }
        _ => unreachable!("trajectory kind checked at construction"),
    }
}

impl MwgState {
    pub fn new(law: &GriddedLaw, index: usize, trajectory: GriddedTrajectory) -> Result<Self> {
        let grid = law.grid();
        if index >= grid.len() {
            return Err(Error::input(format!("grid index {index} out of range")));
        }
        match (law, &trajectory) {
            (GriddedLaw::Ensemble(e), GriddedTrajectory::Member(m)) if *m < e.n_members() => {}
            (GriddedLaw::Gaussian { law, .. }, GriddedTrajectory::Values(f)) if f.len() == law.dim() => {}
            _ => return Err(Error::input("trajectory does not match the gridded law")),
        }
        let member_norms = match law {
            GriddedLaw::Ensemble(e) => e.log_normalizers(),
            GriddedLaw::Gaussian { .. } => Vec::new(),
        };
        let (log_values, log_norm) = log_values_of(law, &member_norms, &trajectory);
        let mut s = Self {
            index,
            trajectory,
            log_values,
            member_norms,
            log_norm,
            log_density: 0.0,
            iteration: 0,
        };
        s.log_density = s.log_value(law, index);
        if !(s.log_norm.is_finite() && s.log_density.is_finite()) {
            return Err(Error::Initialization(
                "initial trajectory has zero density at the initial point".into(),
            ));
        }
        Ok(s)
    }

    fn log_value(&self, law: &GriddedLaw, g: usize) -> f64 {
        match (law, &self.trajectory) {
            (GriddedLaw::Ensemble(e), GriddedTrajectory::Member(m)) => e.log_values()[(*m, g)],
            _ => self.log_values[g],
        }
    }

    pub fn u(&self, grid: &Grid) -> Vec<f64> {
        grid.point(self.index)
    }
}

/// Normalized-ratio trajectory move followed by one MH u-move on the grid.
///
/// For ensembles the trajectory proposal is lazy: with probability `rho` the
/// current member is kept, otherwise a member is drawn uniformly. For
/// Gaussian laws the proposal is pCN with correlation `rho`.
pub fn mwg_step(
    law: &GriddedLaw,
    state: &mut MwgState,
    rho: f64,
    window: usize,
    rng_u: &mut SeededRng,
    rng_f: &mut SeededRng,
) -> MwgStep {
    let grid = law.grid().clone();
    let g = state.index;
    let proposal = match (law, &state.trajectory) {
        (GriddedLaw::Ensemble(e), GriddedTrajectory::Member(m)) => {
            if rng_f.random::<f64>() < rho {
                GriddedTrajectory::Member(*m)
            } else {
                GriddedTrajectory::Member(rng_f.random_range(0..e.n_members()))
            }
        }
        (GriddedLaw::Gaussian { law: l, .. }, GriddedTrajectory::Values(f)) => {
            GriddedTrajectory::Values(l.pcn(f, rho, rng_f))
        }
        _ => unreachable!("trajectory kind checked at construction"),
    };
    let (lv, lz) = log_values_of(law, &state.member_norms, &proposal);
    let underflow = !lz.is_finite();
    let (f_alpha, f_accepted) = if underflow {
        (0.0, false)
    } else {
        let l_new = match (law, &proposal) {
            (GriddedLaw::Ensemble(e), GriddedTrajectory::Member(m)) => e.log_values()[(*m, g)],
            _ => lv[g],
        };
        let a = acceptance(state.log_density - state.log_norm, l_new - lz);
        (a, rng_f.random::<f64>() < a)
    };
    if f_accepted {
        state.trajectory = proposal;
        state.log_values = lv;
        state.log_norm = lz;
        state.log_density = state.log_value(law, g);
    }

    let (log_proposed, next) = match grid_jump(&grid, window, g, rng_u) {
        Some(j) => (state.log_value(law, j), Some(j)),
        None => (f64::NEG_INFINITY, None),
    };
    let alpha = acceptance(state.log_density, log_proposed);
    let accepted = rng_u.random::<f64>() < alpha;
    let u_move = MoveRecord {
        log_current: state.log_density,
        log_proposed,
        alpha,
        accepted,
    };
    if let (true, Some(j)) = (accepted, next) {
        state.index = j;
        state.log_density = log_proposed;
    }
    state.iteration += 1;
    MwgStep {
        f_accepted,
        f_alpha,
        underflow,
        u_move,
    }
}

/// Run Metropolis-within-Gibbs for the expected posterior of a gridded
/// problem. The proposal must be [`UProposal::Grid`] on the law's grid.
/// Without an initial trajectory one is drawn from the law.
pub fn mwg(
    law: &GriddedLaw,
    u0: &[f64],
    initial: Option<GriddedTrajectory>,
    config: &SamplerConfig,
) -> Result<ChainOutput> {
    let grid = law.grid().clone();
    config.validate(grid.dim())?;
    let UProposal::Grid { grid: pg, window } = &config.proposal else {
        return Err(Error::input("MwG needs a grid proposal"));
    };
    if *pg != *grid {
        return Err(Error::input("proposal grid differs from the trajectory grid"));
    }
    let index = grid
        .locate(u0)
        .ok_or_else(|| Error::Initialization("initial point lies outside the grid".into()))?;
    let mut rng_u = rng::child_rng(config.seed, &[1]);
    let mut rng_f = rng::child_rng(config.seed, &[2]);
    let trajectory = match initial {
        Some(t) => t,
        None => match law {
            GriddedLaw::Ensemble(e) => GriddedTrajectory::Member(rng_f.random_range(0..e.n_members())),
            GriddedLaw::Gaussian { law, .. } => GriddedTrajectory::Values(law.draw(&mut rng_f)),
        },
    };
    let mut state = MwgState::new(law, index, trajectory)?;
    let tagged = matches!(law, GriddedLaw::Ensemble(_));
    let mut rec = ChainRecorder::new(config, grid.dim(), tagged, true);
    for t in 0..config.n_iterations {
        for s in 0..config.u_steps {
            let rho = if s == 0 { config.rho } else { 1.0 };
            let step = mwg_step(law, &mut state, rho, *window, &mut rng_u, &mut rng_f);
            if s == 0 {
                rec.f_move(t, step.f_accepted);
                rec.flags.underflow_rejections += step.underflow as usize;
            }
            rec.u_move(t, step.u_move);
        }
        let tag = match &state.trajectory {
            GriddedTrajectory::Member(m) => Some(*m),
            GriddedTrajectory::Values(_) => None,
        };
        rec.end_iteration(t, &grid.point(state.index), state.log_density, tag);
    }
    Ok(rec.finish("mwg", 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::ep_density_grid;
    use nalgebra::DMatrix;

    fn toy_ensemble(m: usize) -> EmulatorEnsemble {
        let grid = Arc::new(Grid::midpoint(&[(0.0, 1.0)], &[30]).unwrap());
        let lv = DMatrix::from_fn(m, 30, |i, g| {
            let c = 0.3 + 0.4 * i as f64 / m as f64;
            let u = grid.point(g)[0];
            -0.5 * ((u - c) / 0.15).powi(2) + i as f64
        });
        EmulatorEnsemble::from_log_values(grid, lv, (0..m as u64).collect()).unwrap()
    }

    #[test]
    fn frozen_trajectory_always_accepts() {
        let ens = toy_ensemble(5);
        let law = GriddedLaw::Ensemble(&ens);
        let mut st = MwgState::new(&law, 10, GriddedTrajectory::Member(2)).unwrap();
        let (mut a, mut b) = (rng::rng(1), rng::rng(2));
        for _ in 0..50 {
            let s = mwg_step(&law, &mut st, 1.0, 2, &mut a, &mut b);
            assert!(s.f_accepted && s.f_alpha == 1.0);
        }
        assert_eq!(st.trajectory, GriddedTrajectory::Member(2));
    }

    #[test]
    fn ratio_ignores_trajectory_scale() {
        // Trajectory i carries an additive log offset of i; the normalized
        // ratio must equal the ratio after removing the offsets.
        let ens = toy_ensemble(4);
        let flat = EmulatorEnsemble::from_log_values(
            ens.grid().clone(),
            DMatrix::from_fn(4, 30, |i, g| ens.log_values()[(i, g)] - i as f64 + 7.0),
            (0..4).collect(),
        )
        .unwrap();
        for (i, j, g) in [(0, 3, 5), (2, 1, 20), (3, 0, 12)] {
            let ratio = |e: &EmulatorEnsemble| {
                let z = e.log_normalizers();
                (e.log_values()[(j, g)] - z[j]) - (e.log_values()[(i, g)] - z[i])
            };
            assert!((ratio(&ens) - ratio(&flat)).abs() < 1e-12);
        }
    }

    #[test]
    fn long_run_matches_grid_ep() {
        let ens = toy_ensemble(8);
        let law = GriddedLaw::Ensemble(&ens);
        let grid = ens.grid().clone();
        let cfg = SamplerConfig::new(
            60_000,
            1_000,
            UProposal::Grid {
                grid: (*grid).clone(),
                window: 6,
            },
            3,
        )
        .with_rho(0.0);
        let out = mwg(&law, &[0.5], None, &cfg).unwrap();
        let (ep, _) = ep_density_grid(&ens).unwrap();
        let mut hist = vec![0.0; grid.len()];
        for r in out.sample_rows() {
            hist[grid.locate(&r).unwrap()] += 1.0 / out.n_samples() as f64;
        }
        let tv: f64 = 0.5 * hist.iter().zip(ep.masses()).map(|(h, p)| (h - p).abs()).sum::<f64>();
        assert!(tv < 0.04, "TV {tv}");
        // Every member is visited with frequency close to 1/8.
        let tags = out.trajectory_tags.unwrap();
        for m in 0..8 {
            let f = tags.iter().filter(|&&t| t == m).count() as f64 / tags.len() as f64;
            assert!((f - 0.125).abs() < 0.03, "member {m}: {f}");
        }
    }
}
