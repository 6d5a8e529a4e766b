use nalgebra::DVector;
use rand::Rng;

use super::config::{ChainOutput, MoveRecord, SamplerConfig};
use super::kernel::{acceptance, mh_u_move, ChainRecorder, UKernel};
use super::mh::FiniteGaussianLaw;
use crate::error::{Error, Result};
use crate::gp::{jit_bivariate, BoundFn, GaussianEmulator};
use crate::posterior::InverseProblem;
use crate::rng::{self, std_normal, SeededRng};

/// Trajectory law evaluated lazily at the points the chain visits: one
/// independent GP per target output, optionally clipped at `b(u)`.
#[derive(Clone, Copy)]
pub struct JitLaw<'a> {
    pub problem: &'a InverseProblem,
    pub outputs: &'a [GaussianEmulator],
    pub clip: Option<&'a BoundFn>,
}

impl JitLaw<'_> {
    pub fn log_density(&self, u: &[f64], f_u: &[f64]) -> f64 {
        match self.clip {
            Some(b) => {
                let bu = b(u);
                let v: Vec<f64> = f_u.iter().map(|x| x.min(bu)).collect();
                self.problem.log_unnorm_density(u, &v)
            }
            None => self.problem.log_unnorm_density(u, f_u),
        }
    }
}

#[derive(Clone, Copy)]
pub enum TrajectoryLaw<'a> {
    Finite(&'a FiniteGaussianLaw),
    JustInTime(JitLaw<'a>),
}

/// Lower-triangular factor of a 2×2 covariance, tolerating singularity.
fn chol2(c: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let l11 = c[0][0].max(0.0).sqrt();
    if l11 > 0.0 {
        let l21 = c[1][0] / l11;
        [[l11, 0.0], [l21, (c[1][1] - l21 * l21).max(0.0).sqrt()]]
    } else {
        [[0.0, 0.0], [0.0, c[1][1].max(0.0).sqrt()]]
    }
}

/// Chain on `(u, f_u)` for just-in-time trajectories. The state never grows:
/// the emulators stay at their design data and only the current value
/// `f_u` is carried between iterations.
pub struct JitChain<'a> {
    law: JitLaw<'a>,
    kernel: UKernel,
    rng_u: SeededRng,
    rng_f: SeededRng,
    pub u: Vec<f64>,
    pub f_u: Vec<f64>,
    pub log_density: f64,
    pub singular_projections: usize,
}

impl<'a> JitChain<'a> {
    pub fn new(law: JitLaw<'a>, u0: &[f64], f0: Option<Vec<f64>>, config: &SamplerConfig) -> Result<Self> {
        config.validate(u0.len())?;
        if law.outputs.len() != law.problem.target_dim() {
            return Err(Error::Dimension {
                expected: law.problem.target_dim(),
                got: law.outputs.len(),
            });
        }
        let mut rng_f = rng::child_rng(config.seed, &[2]);
        let f_u = match f0 {
            Some(f) if f.len() == law.outputs.len() => f,
            Some(f) => {
                return Err(Error::Dimension {
                    expected: law.outputs.len(),
                    got: f.len(),
                })
            }
            None => law
                .outputs
                .iter()
                .map(|em| {
                    let (m, v) = em.predict(u0);
                    m + v.max(0.0).sqrt() * std_normal(&mut rng_f)
                })
                .collect(),
        };
        if !law.problem.in_support(u0) {
            return Err(Error::Initialization("initial point lies outside the prior support".into()));
        }
        let log_density = law.log_density(u0, &f_u);
        Ok(Self {
            law,
            kernel: UKernel::new(config),
            rng_u: rng::child_rng(config.seed, &[1]),
            rng_f,
            u: u0.to_vec(),
            f_u,
            log_density,
            singular_projections: 0,
        })
    }

    /// Number of scalars carried between iterations.
    pub fn state_len(&self) -> usize {
        self.u.len() + self.f_u.len()
    }

    /// One random-kernel pCN step: propose `ũ`, move the pair `(f_u, f_ũ)`
    /// under its bivariate law with correlation `rho` (the value at `ũ` is
    /// first revealed conditionally on `f_u`), then MH on `u`.
    pub fn rkpcn_step(&mut self, rho: f64) -> MoveRecord {
        let Some(v) = self.kernel.propose(&self.u, &mut self.rng_u) else {
            // The proposal left the support; only the marginal move at u stands.
            self.marginal_pcn(rho);
            self.log_density = self.law.log_density(&self.u, &self.f_u);
            let rec = MoveRecord {
                log_current: self.log_density,
                log_proposed: f64::NEG_INFINITY,
                alpha: 0.0,
                accepted: false,
            };
            let _: f64 = self.rng_u.random();
            return rec;
        };
        let k = self.f_u.len();
        let mut f_v = vec![0.0; k];
        for i in 0..k {
            let law = jit_bivariate(&self.law.outputs[i], &self.u, self.f_u[i], &v);
            self.singular_projections += law.flagged as usize;
            let mut pair = [self.f_u[i], law.cond_mean + law.cond_var.sqrt() * std_normal(&mut self.rng_f)];
            if rho < 1.0 {
                let l = chol2(&law.cov);
                let (z0, z1) = (std_normal(&mut self.rng_f), std_normal(&mut self.rng_f));
                let xi = [l[0][0] * z0, l[1][0] * z0 + l[1][1] * z1];
                let s = (1.0 - rho * rho).sqrt();
                for j in 0..2 {
                    pair[j] = law.mean[j] + rho * (pair[j] - law.mean[j]) + s * xi[j];
                }
            }
            self.f_u[i] = pair[0];
            f_v[i] = pair[1];
        }
        self.log_density = self.law.log_density(&self.u, &self.f_u);
        let log_proposed = self.law.log_density(&v, &f_v);
        self.u_decision(v, f_v, log_proposed)
    }

    /// One correlated pseudo-marginal step: pCN on the marginal of `f(u)`
    /// accepted with the unnormalized ratio, then an MH u-move with `f_ũ`
    /// revealed conditionally on `f_u`. Returns the f-move outcome.
    pub fn cpm_f_move(&mut self, rho: f64) -> bool {
        if rho >= 1.0 {
            let _: f64 = self.rng_f.random();
            return true;
        }
        let old = self.f_u.clone();
        self.marginal_pcn(rho);
        let log_new = self.law.log_density(&self.u, &self.f_u);
        let a = acceptance(self.log_density, log_new);
        if self.rng_f.random::<f64>() < a {
            self.log_density = log_new;
            true
        } else {
            self.f_u = old;
            false
        }
    }

    pub fn cpm_u_move(&mut self) -> MoveRecord {
        match self.kernel.propose(&self.u, &mut self.rng_u) {
            Some(v) => {
                let f_v: Vec<f64> = (0..self.f_u.len())
                    .map(|i| {
                        let law = jit_bivariate(&self.law.outputs[i], &self.u, self.f_u[i], &v);
                        self.singular_projections += law.flagged as usize;
                        law.cond_mean + law.cond_var.sqrt() * std_normal(&mut self.rng_f)
                    })
                    .collect();
                let log_proposed = self.law.log_density(&v, &f_v);
                self.u_decision(v, f_v, log_proposed)
            }
            None => {
                let _: f64 = self.rng_u.random();
                MoveRecord {
                    log_current: self.log_density,
                    log_proposed: f64::NEG_INFINITY,
                    alpha: 0.0,
                    accepted: false,
                }
            }
        }
    }

    fn marginal_pcn(&mut self, rho: f64) {
        if rho >= 1.0 {
            return;
        }
        let s = (1.0 - rho * rho).sqrt();
        for i in 0..self.f_u.len() {
            let (m, var) = self.law.outputs[i].predict(&self.u);
            self.f_u[i] = m + rho * (self.f_u[i] - m) + s * var.max(0.0).sqrt() * std_normal(&mut self.rng_f);
        }
    }

    fn u_decision(&mut self, v: Vec<f64>, f_v: Vec<f64>, log_proposed: f64) -> MoveRecord {
        let alpha = acceptance(self.log_density, log_proposed);
        let accepted = self.rng_u.random::<f64>() < alpha;
        let rec = MoveRecord {
            log_current: self.log_density,
            log_proposed,
            alpha,
            accepted,
        };
        if accepted {
            self.u = v;
            self.f_u = f_v;
            self.log_density = log_proposed;
        }
        rec
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Scheme {
    RandomKernel,
    PseudoMarginal,
}

fn run(
    scheme: Scheme,
    law: &TrajectoryLaw,
    u0: &[f64],
    f0: Option<DVector<f64>>,
    config: &SamplerConfig,
) -> Result<ChainOutput> {
    let name = match scheme {
        Scheme::RandomKernel if config.rho == 0.0 => "independent-cut",
        Scheme::RandomKernel => "rkpcn",
        Scheme::PseudoMarginal => "cpm-eup",
    };
    let f_moves = scheme == Scheme::PseudoMarginal;
    let mut rec = ChainRecorder::new(config, u0.len(), false, f_moves);
    match law {
        TrajectoryLaw::Finite(l) => {
            config.validate(u0.len())?;
            let mut kernel = UKernel::new(config);
            let mut rng_u = rng::child_rng(config.seed, &[1]);
            let mut rng_f = rng::child_rng(config.seed, &[2]);
            let mut f = match f0 {
                Some(f) if f.len() == l.dim() => f,
                Some(f) => {
                    return Err(Error::Dimension {
                        expected: l.dim(),
                        got: f.len(),
                    })
                }
                None => l.draw(&mut rng_f),
            };
            let mut u = u0.to_vec();
            let mut log_cur = l.log_density(&u, &f);
            if log_cur.is_nan() || (scheme == Scheme::PseudoMarginal && log_cur == f64::NEG_INFINITY) {
                return Err(Error::Initialization(format!("log density at the initial state is {log_cur}")));
            }
            for t in 0..config.n_iterations {
                match scheme {
                    Scheme::RandomKernel => {
                        f = l.pcn(&f, config.rho, &mut rng_f);
                        log_cur = l.log_density(&u, &f);
                    }
                    Scheme::PseudoMarginal => {
                        let g = l.pcn(&f, config.rho, &mut rng_f);
                        let log_new = l.log_density(&u, &g);
                        let accepted = rng_f.random::<f64>() < acceptance(log_cur, log_new);
                        if accepted {
                            f = g;
                            log_cur = log_new;
                        }
                        rec.f_move(t, accepted);
                    }
                }
                for _ in 0..config.u_steps {
                    let m = mh_u_move(&kernel, &mut u, &mut log_cur, |v| l.log_density(v, &f), &mut rng_u);
                    kernel.adapt(t, m.alpha);
                    rec.u_move(t, m);
                }
                rec.end_iteration(t, &u, log_cur, None);
            }
            Ok(rec.finish(name, kernel.factor()))
        }
        TrajectoryLaw::JustInTime(j) => {
            let f0 = f0.map(|f| f.iter().copied().collect());
            let mut chain = JitChain::new(*j, u0, f0, config)?;
            for t in 0..config.n_iterations {
                match scheme {
                    Scheme::RandomKernel => {
                        for s in 0..config.u_steps {
                            let m = chain.rkpcn_step(if s == 0 { config.rho } else { 1.0 });
                            chain.kernel.adapt(t, m.alpha);
                            rec.u_move(t, m);
                        }
                    }
                    Scheme::PseudoMarginal => {
                        let accepted = chain.cpm_f_move(config.rho);
                        rec.f_move(t, accepted);
                        for _ in 0..config.u_steps {
                            let m = chain.cpm_u_move();
                            chain.kernel.adapt(t, m.alpha);
                            rec.u_move(t, m);
                        }
                    }
                }
                rec.end_iteration(t, &chain.u, chain.log_density, None);
            }
            rec.flags.singular_projections = chain.singular_projections;
            Ok(rec.finish(name, chain.kernel.factor()))
        }
    }
}

/// Random-kernel pCN for the expected posterior: each iteration pCN-moves
/// the trajectory without correction and then performs `u_steps` MH moves
/// against the moved trajectory's unnormalized density. `rho = 0` is the
/// independent cut scheme.
pub fn rkpcn(law: &TrajectoryLaw, u0: &[f64], f0: Option<DVector<f64>>, config: &SamplerConfig) -> Result<ChainOutput> {
    run(Scheme::RandomKernel, law, u0, f0, config)
}

/// Correlated pseudo-marginal sampler whose u-marginal is the expected
/// unnormalized posterior: the pCN trajectory move is accepted with the
/// unnormalized density ratio at the current `u`.
pub fn cpm_eup(law: &TrajectoryLaw, u0: &[f64], f0: Option<DVector<f64>>, config: &SamplerConfig) -> Result<ChainOutput> {
    run(Scheme::PseudoMarginal, law, u0, f0, config)
}
