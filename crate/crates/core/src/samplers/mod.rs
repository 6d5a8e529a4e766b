//! MCMC kernels: random-walk MH, pCN trajectory moves, Metropolis within
//! Monte Carlo, Metropolis-within-Gibbs on grids, random-kernel pCN (finite
//! and just-in-time) and the correlated pseudo-marginal EUP sampler.
//!
//! Every chain uses two random streams derived from its seed: stream 1 for
//! u-proposals and u-acceptance, stream 2 for trajectory draws and
//! trajectory acceptance. Samplers that share a u-kernel therefore produce
//! identical u-chains whenever their trajectories coincide.

mod config;
mod kernel;
mod mh;
mod mwg;
mod mwmc;
mod rkpcn;

pub use config::{ChainFlags, ChainOutput, MoveRecord, SamplerConfig, UProposal};
pub use mh::{pcn_update, rw_mh, FiniteGaussianLaw, FiniteLogDensity};
pub use mwg::{mwg, mwg_step, GriddedLaw, GriddedTrajectory, MwgState, MwgStep};
pub use mwmc::mwmc;
pub use rkpcn::{cpm_eup, rkpcn, JitChain, JitLaw, TrajectoryLaw};
