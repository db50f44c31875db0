//! Linear-algebra backends that produce Newton directions for the IPM.

use std::sync::Arc;

use crate::ipm::{Formulation, IpmError, Iterate, Problem};
use crate::krylov::{gmres, pcg, KrylovConfig, KrylovMethod, KrylovOutcome};
use crate::ldl::{factorize_qdef_escalating, FactorHandle, Symbolic};
use crate::newton::{AugSystem, NewtonRhs, ReducedSchur, SlackNewton, Step};
use crate::precond::{krylov_tol, PrecondManager, ReusePolicy};
use crate::sparse::{norm2, DiagMat};

/// Relative residual below which a Krylov solve counts as converged whatever
/// the absolute target; smaller residuals are below rounding level.
pub const ATTAINABLE_REL: f64 = 1e-9;

fn effective_tol(abs_tol: f64, rhs: &[f64]) -> f64 {
    abs_tol.max(ATTAINABLE_REL * norm2(rhs))
}

/// Counters shared by all backends.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinAlgStats {
    pub factorizations: usize,
    pub krylov_iters: usize,
    pub krylov_solves: usize,
    /// Iterations of each Krylov solve, grouped by IPM step.
    pub krylov_per_step: Vec<Vec<usize>>,
    pub escalations: u32,
    pub retries: usize,
    pub clamped: usize,
}

pub trait LinearBackend {
    fn formulation(&self) -> Formulation;
    /// Called once per IPM step before the two solves.
    fn prepare(&mut self, p: &Problem, it: &Iterate, mu: f64) -> Result<(), IpmError>;
    fn solve(&mut self, p: &Problem, it: &Iterate, rhs: &NewtonRhs, mu: f64) -> Result<Step, IpmError>;
    /// Called after both solves of a step.
    fn finish_step(&mut self) {}
    fn stats(&self) -> &LinAlgStats;
}

/// LDLᵀ of the augmented system, refactorized every step.
pub struct DirectAugmented {
    aug: AugSystem,
    symbolic: Option<Arc<Symbolic>>,
    handle: Option<FactorHandle>,
    stats: LinAlgStats,
}

impl DirectAugmented {
    pub fn new(p: &Problem) -> Self {
        DirectAugmented {
            aug: AugSystem::new(p),
            symbolic: None,
            handle: None,
            stats: LinAlgStats::default(),
        }
    }
}

impl LinearBackend for DirectAugmented {
    fn formulation(&self) -> Formulation {
        Formulation::Standard
    }

    fn prepare(&mut self, p: &Problem, it: &Iterate, _mu: f64) -> Result<(), IpmError> {
        self.stats.clamped += self.aug.update(p, it)?;
        let (h, esc) = factorize_qdef_escalating(self.aug.matrix.matrix(), p.model.d(), p.reg.rho, self.symbolic.as_ref())?;
        self.symbolic = Some(Arc::clone(h.symbolic()));
        self.handle = Some(h);
        self.stats.factorizations += 1;
        self.stats.escalations += esc;
        Ok(())
    }

    fn solve(&mut self, p: &Problem, it: &Iterate, rhs: &NewtonRhs, _mu: f64) -> Result<Step, IpmError> {
        let h = self.handle.as_ref().expect("prepare before solve");
        let v = self.aug.rhs(p, it, rhs);
        let sol = h.solve(&v)?;
        Ok(self.aug.recover(p, it, rhs, &sol))
    }

    fn stats(&self) -> &LinAlgStats {
        &self.stats
    }
}

/// LDLᵀ of `S(Θ)` refactorized every step.
pub struct SlackDirect {
    sn: SlackNewton,
    symbolic: Option<Arc<Symbolic>>,
    handle: Option<FactorHandle>,
    stats: LinAlgStats,
}

impl SlackDirect {
    pub fn new(p: &Problem) -> Self {
        SlackDirect {
            sn: SlackNewton::new(p),
            symbolic: None,
            handle: None,
            stats: LinAlgStats::default(),
        }
    }
}

impl LinearBackend for SlackDirect {
    fn formulation(&self) -> Formulation {
        Formulation::Slack
    }

    fn prepare(&mut self, p: &Problem, it: &Iterate, _mu: f64) -> Result<(), IpmError> {
        self.stats.clamped += self.sn.update(p, it)?;
        let (h, esc) = factorize_qdef_escalating(self.sn.schur.matrix(), p.model.d(), p.reg.rho, self.symbolic.as_ref())?;
        self.symbolic = Some(Arc::clone(h.symbolic()));
        self.handle = Some(h);
        self.stats.factorizations += 1;
        self.stats.escalations += esc;
        Ok(())
    }

    fn solve(&mut self, p: &Problem, it: &Iterate, rhs: &NewtonRhs, _mu: f64) -> Result<Step, IpmError> {
        let h = self.handle.as_ref().expect("prepare before solve");
        let (mut rx, ry) = self.sn.schur_rhs(p, it, rhs);
        rx.extend(ry);
        let sol = h.solve(&rx)?;
        let d = p.model.d();
        Ok(self.sn.back_substitute(p, it, rhs, sol[..d].to_vec(), &sol[d..]))
    }

    fn stats(&self) -> &LinAlgStats {
        &self.stats
    }
}

/// GMRES on `S(Θ)` preconditioned by an LDLᵀ of `S(Θ_old)`.
pub struct SlackGmres {
    sn: SlackNewton,
    mgr: PrecondManager,
    stats: LinAlgStats,
    step_index: usize,
}

impl SlackGmres {
    pub fn new(p: &Problem, policy: ReusePolicy) -> Self {
        SlackGmres {
            sn: SlackNewton::new(p),
            mgr: PrecondManager::new(policy),
            stats: LinAlgStats::default(),
            step_index: 0,
        }
    }

    fn refresh(&mut self, p: &Problem) -> Result<(), IpmError> {
        self.mgr.refresh_qdef(
            self.sn.schur.matrix(),
            p.model.d(),
            p.reg.rho,
            DiagMat(self.sn.theta_inv.clone()),
            self.step_index,
        )?;
        self.stats.factorizations = self.mgr.factorizations();
        self.stats.escalations = self.mgr.escalations();
        Ok(())
    }

    fn run(&self, rhs: &[f64], tol: f64) -> Result<KrylovOutcome, IpmError> {
        let h = self.mgr.handle().expect("preconditioner built in prepare");
        let s = self.sn.schur.matrix();
        let mut work = Vec::with_capacity(rhs.len());
        let cfg = KrylovConfig::gmres(self.mgr.policy.budget, self.mgr.policy.budget, tol);
        Ok(gmres(
            |x, y| {
                y.iter_mut().for_each(|v| *v = 0.0);
                s.gaxpy(1.0, x, y);
            },
            |x, y| {
                y.copy_from_slice(x);
                h.solve_raw_in_place(y, &mut work);
            },
            rhs,
            &cfg,
        )?)
    }
}

impl LinearBackend for SlackGmres {
    fn formulation(&self) -> Formulation {
        Formulation::Slack
    }

    fn prepare(&mut self, p: &Problem, it: &Iterate, _mu: f64) -> Result<(), IpmError> {
        self.stats.clamped += self.sn.update(p, it)?;
        self.stats.krylov_per_step.push(Vec::new());
        if self.mgr.needs_refresh() {
            self.refresh(p)?;
        }
        self.step_index += 1;
        Ok(())
    }

    fn solve(&mut self, p: &Problem, it: &Iterate, rhs: &NewtonRhs, mu: f64) -> Result<Step, IpmError> {
        let (mut rx, ry) = self.sn.schur_rhs(p, it, rhs);
        rx.extend(ry);
        let tol = effective_tol(krylov_tol(KrylovMethod::Gmres, mu, 0.0), &rx);
        let mut out = self.run(&rx, tol)?;
        self.account(&out);
        if !out.converged && self.mgr.policy.retry {
            self.stats.retries += 1;
            self.refresh(p)?;
            out = self.run(&rx, tol)?;
            self.account(&out);
        }
        if !out.converged {
            return Err(IpmError::KrylovFailed {
                iterations: out.iterations,
                residual: out.residual_norm,
            });
        }
        let d = p.model.d();
        let sol = out.solution;
        Ok(self.sn.back_substitute(p, it, rhs, sol[..d].to_vec(), &sol[d..]))
    }

    fn finish_step(&mut self) {
        self.mgr.end_step();
    }

    fn stats(&self) -> &LinAlgStats {
        &self.stats
    }
}

impl SlackGmres {
    fn account(&mut self, out: &KrylovOutcome) {
        self.mgr.record(out);
        self.stats.krylov_iters += out.iterations;
        self.stats.krylov_solves += 1;
        if let Some(v) = self.stats.krylov_per_step.last_mut() {
            v.push(out.iterations);
        }
    }
}

/// PCG on `δI + A·diag(u)·Aᵀ` preconditioned by a Cholesky factor of an older copy.
pub struct SlackPcg {
    sn: SlackNewton,
    red: ReducedSchur,
    mgr: PrecondManager,
    stats: LinAlgStats,
    tol: f64,
    step_index: usize,
}

impl SlackPcg {
    pub fn new(p: &Problem, policy: ReusePolicy, tol: f64) -> Result<Self, IpmError> {
        Ok(SlackPcg {
            sn: SlackNewton::new(p),
            red: ReducedSchur::new(p)?,
            mgr: PrecondManager::new(policy),
            stats: LinAlgStats::default(),
            tol,
            step_index: 0,
        })
    }

    fn refresh(&mut self, p: &Problem) -> Result<(), IpmError> {
        self.red.update(p, &self.sn);
        self.mgr
            .refresh_spd(&self.red.matrix, DiagMat(self.sn.theta_inv.clone()), self.step_index)?;
        self.stats.factorizations = self.mgr.factorizations();
        Ok(())
    }

    fn run(&self, p: &Problem, rhs: &[f64]) -> Result<KrylovOutcome, IpmError> {
        let h = self.mgr.handle().expect("preconditioner built in prepare");
        let a = &p.model.a;
        let mut work = Vec::with_capacity(rhs.len());
        let tol = effective_tol(krylov_tol(KrylovMethod::Pcg, 0.0, self.tol), rhs);
        let cfg = KrylovConfig::pcg(self.mgr.policy.budget, tol);
        Ok(pcg(
            |x, y| self.red.apply(a, x, y),
            |x, y| {
                y.copy_from_slice(x);
                h.solve_raw_in_place(y, &mut work);
            },
            rhs,
            &cfg,
        )?)
    }

    fn account(&mut self, out: &KrylovOutcome) {
        self.mgr.record(out);
        self.stats.krylov_iters += out.iterations;
        self.stats.krylov_solves += 1;
        if let Some(v) = self.stats.krylov_per_step.last_mut() {
            v.push(out.iterations);
        }
    }
}

impl LinearBackend for SlackPcg {
    fn formulation(&self) -> Formulation {
        Formulation::Slack
    }

    fn prepare(&mut self, p: &Problem, it: &Iterate, _mu: f64) -> Result<(), IpmError> {
        self.stats.clamped += self.sn.update(p, it)?;
        // The operator uses the current weights; the factor may be older.
        self.red.u = self.sn.primal_diag(p).iter().map(|v| 1.0 / v).collect();
        self.stats.krylov_per_step.push(Vec::new());
        if self.mgr.needs_refresh() {
            self.refresh(p)?;
        }
        self.step_index += 1;
        Ok(())
    }

    fn solve(&mut self, p: &Problem, it: &Iterate, rhs: &NewtonRhs, _mu: f64) -> Result<Step, IpmError> {
        let (rx, ry) = self.sn.schur_rhs(p, it, rhs);
        let a = &p.model.a;
        let r = self.red.rhs(a, &rx, &ry);
        let mut out = self.run(p, &r)?;
        self.account(&out);
        if !out.converged && self.mgr.policy.retry {
            self.stats.retries += 1;
            self.refresh(p)?;
            out = self.run(p, &r)?;
            self.account(&out);
        }
        if !out.converged {
            return Err(IpmError::KrylovFailed {
                iterations: out.iterations,
                residual: out.residual_norm,
            });
        }
        let v = out.solution;
        let dx = self.red.recover_dx(a, &rx, &v);
        Ok(self.sn.back_substitute(p, it, rhs, dx, &v))
    }

    fn finish_step(&mut self) {
        self.mgr.end_step();
    }

    fn stats(&self) -> &LinAlgStats {
        &self.stats
    }
}
