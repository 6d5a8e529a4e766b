use nalgebra::DMatrix;
use rand::Rng;

use super::config::{ChainFlags, ChainOutput, MoveRecord, SamplerConfig, UProposal};
use crate::posterior::Grid;
use crate::rng::{std_normal, std_normal_vec, SeededRng};

/// Robbins-Monro step decay for the log scale factor.
const ADAPT_DECAY: f64 = 0.6;

/// MH acceptance probability from two log densities. A current state with
/// zero density always moves to a proposal with positive density.
pub(crate) fn acceptance(log_current: f64, log_proposed: f64) -> f64 {
    if log_proposed == f64::NEG_INFINITY || log_proposed.is_nan() {
        0.0
    } else if log_current == f64::NEG_INFINITY {
        1.0
    } else {
        (log_proposed - log_current).exp().min(1.0)
    }
}

/// Symmetric u-proposal with burn-in adaptation of a global scale factor.
#[derive(Clone, Debug)]
pub(crate) struct UKernel {
    proposal: UProposal,
    log_factor: f64,
    adapt: bool,
    burn_in: usize,
    target: f64,
}

impl UKernel {
    pub fn new(config: &SamplerConfig) -> Self {
        let adapt = config.adapt && !matches!(config.proposal, UProposal::Grid { .. });
        Self {
            proposal: config.proposal.clone(),
            log_factor: 0.0,
            adapt,
            burn_in: config.burn_in,
            target: config.target_acceptance,
        }
    }

    pub fn factor(&self) -> f64 {
        self.log_factor.exp()
    }

    /// Propose a move from `u`; `None` means the proposal left the grid.
    pub fn propose(&self, u: &[f64], rng: &mut SeededRng) -> Option<Vec<f64>> {
        let s = self.factor();
        match &self.proposal {
            UProposal::RandomWalk { scales } => Some(
                u.iter()
                    .zip(scales)
                    .map(|(x, sc)| x + s * sc * std_normal(rng))
                    .collect(),
            ),
            UProposal::Preconditioned { factor, scale } => {
                let step = factor * std_normal_vec(rng, u.len()) * (s * scale);
                Some(u.iter().zip(step.iter()).map(|(x, d)| x + d).collect())
            }
            UProposal::Grid { grid, window } => {
                let i = grid.locate(u)?;
                grid_jump(grid, *window, i, rng).map(|j| grid.point(j))
            }
        }
    }

    pub fn adapt(&mut self, iteration: usize, alpha: f64) {
        if self.adapt && iteration < self.burn_in {
            let gamma = (iteration as f64 + 1.0).powf(-ADAPT_DECAY);
            self.log_factor += gamma * (alpha - self.target);
        }
    }
}

/// Symmetric jump from grid node `i` by a uniform integer offset in
/// `[-window, window]` per dimension, redrawing the all-zero offset.
/// `None` when the jump leaves the grid.
pub(crate) fn grid_jump(grid: &Grid, window: usize, i: usize, rng: &mut SeededRng) -> Option<usize> {
    let w = window as i64;
    let idx = grid.multi_index(i);
    let offsets: Vec<i64> = loop {
        let o: Vec<i64> = (0..idx.len()).map(|_| rng.random_range(-w..=w)).collect();
        if o.iter().any(|&v| v != 0) {
            break o;
        }
    };
    let mut next = Vec::with_capacity(idx.len());
    for ((k, o), n) in idx.iter().zip(&offsets).zip(&grid.nodes) {
        let v = *k as i64 + o;
        if v < 0 || v >= *n as i64 {
            return None;
        }
        next.push(v as usize);
    }
    Some(grid.flat_index(&next))
}

/// Accumulates retained draws, traces and acceptance counts of one chain.
pub(crate) struct ChainRecorder {
    config: SamplerConfig,
    dim: usize,
    rows: Vec<f64>,
    tags: Option<Vec<usize>>,
    trace: Vec<f64>,
    moves: Vec<MoveRecord>,
    u_acc: (usize, usize),
    f_acc: Option<(usize, usize)>,
    pub flags: ChainFlags,
}

impl ChainRecorder {
    pub fn new(config: &SamplerConfig, dim: usize, tagged: bool, f_moves: bool) -> Self {
        Self {
            config: config.clone(),
            dim,
            rows: Vec::with_capacity(config.n_retained() * dim),
            tags: tagged.then(Vec::new),
            trace: Vec::with_capacity(config.n_iterations),
            moves: Vec::new(),
            u_acc: (0, 0),
            f_acc: f_moves.then_some((0, 0)),
            flags: ChainFlags::default(),
        }
    }

    pub fn u_move(&mut self, iteration: usize, rec: MoveRecord) {
        if iteration >= self.config.burn_in {
            self.u_acc.1 += 1;
            self.u_acc.0 += rec.accepted as usize;
        }
        if self.config.record_moves {
            self.moves.push(rec);
        }
    }

    pub fn f_move(&mut self, iteration: usize, accepted: bool) {
        if iteration >= self.config.burn_in {
            if let Some(acc) = self.f_acc.as_mut() {
                acc.1 += 1;
                acc.0 += accepted as usize;
            }
        }
    }

    /// Close iteration `iteration` at state `u` with log density `log_density`.
    pub fn end_iteration(&mut self, iteration: usize, u: &[f64], log_density: f64, tag: Option<usize>) {
        self.trace.push(log_density);
        if self.config.retains(iteration) {
            self.rows.extend_from_slice(u);
            if let (Some(tags), Some(t)) = (self.tags.as_mut(), tag) {
                tags.push(t);
            }
        }
    }

    pub fn finish(self, sampler: &str, scale_factor: f64) -> ChainOutput {
        let rate = |(a, n): (usize, usize)| if n == 0 { 1.0 } else { a as f64 / n as f64 };
        let n = self.rows.len() / self.dim.max(1);
        ChainOutput {
            sampler: sampler.to_string(),
            samples: DMatrix::from_row_slice(n, self.dim, &self.rows),
            trajectory_tags: self.tags,
            u_acceptance: rate(self.u_acc),
            f_acceptance: self.f_acc.map(rate),
            log_density_trace: self.trace,
            moves: self.moves,
            scale_factor,
            flags: self.flags,
            seed: self.config.seed,
            config: self.config,
        }
    }
}

/// One MH u-move against a fixed log density. Updates `u` and `log_current`
/// in place and returns the move record.
pub(crate) fn mh_u_move<F>(
    kernel: &UKernel,
    u: &mut Vec<f64>,
    log_current: &mut f64,
    log_density: F,
    rng: &mut SeededRng,
) -> MoveRecord
where
    F: Fn(&[f64]) -> f64,
{
    let (log_proposed, proposal) = match kernel.propose(u, rng) {
        Some(p) => (log_density(&p), Some(p)),
        None => (f64::NEG_INFINITY, None),
    };
    let alpha = acceptance(*log_current, log_proposed);
    let accepted = rng.random::<f64>() < alpha;
    let rec = MoveRecord {
        log_current: *log_current,
        log_proposed,
        alpha,
        accepted,
    };
    if accepted {
        if let Some(p) = proposal {
            *u = p;
            *log_current = log_proposed;
        }
    }
    rec
}
