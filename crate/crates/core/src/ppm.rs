//! Proximal-point outer loop: anchor updates, inexactness control and
//! global termination.

use std::fmt;

use thiserror::Error;

use crate::backend::{DirectAugmented, LinAlgStats, LinearBackend, SlackDirect, SlackGmres, SlackPcg};
use crate::ipm::{
    inner_residual, inner_stop, inner_stop_theoretical, predictor_corrector_step, start_point, Formulation, InnerConfig,
    IpmError, Iterate, Problem,
};
use crate::model::{compute_reg, ModelError, QpModel, RegParams};
use crate::newton::NewtonError;
use crate::precond::ReusePolicy;
use crate::sparse::norm2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// LDLᵀ of the augmented system every step.
    Direct,
    /// GMRES on the slack Schur complement with a stale LDLᵀ preconditioner.
    GmresLdl,
    /// PCG on the reduced normal form with a stale Cholesky preconditioner.
    PcgChol,
    /// LDLᵀ of the slack Schur complement every step.
    SlackDirect,
}

impl Mode {
    pub fn formulation(self) -> Formulation {
        match self {
            Mode::Direct => Formulation::Standard,
            _ => Formulation::Slack,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Direct => "direct",
            Mode::GmresLdl => "gmres-ldl",
            Mode::PcgChol => "pcg-chol",
            Mode::SlackDirect => "slack-direct",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "direct" => Some(Mode::Direct),
            "gmres-ldl" => Some(Mode::GmresLdl),
            "pcg-chol" => Some(Mode::PcgChol),
            "slack-direct" => Some(Mode::SlackDirect),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Acceptance test for a proximal subproblem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// `‖r_k‖ < 10⁴ σ_rᵏ min(1, disp)`.
    Practical,
    /// `‖r_k‖ < min(ρ,δ)/τ₁ σ_rᵏ min(1, disp)`.
    Theoretical { tau1: f64 },
    /// `‖r_k‖ ≤ tol`: the subproblem is solved to the given accuracy.
    Exact { tol: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub mode: Mode,
    pub tol: f64,
    pub reg_scale: f64,
    /// Bypasses the norm-based regularization formula.
    pub reg: Option<RegParams>,
    pub sigma_r: f64,
    pub max_ppm: usize,
    pub max_ipm: usize,
    /// Krylov iterations per solve; `None` uses 100 for GMRES and 200 for PCG.
    pub krylov_budget: Option<usize>,
    pub refresh_frac: f64,
    pub retry: bool,
    pub stop_rule: StopRule,
    pub inner: InnerConfig,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            mode: Mode::Direct,
            tol: 1e-5,
            reg_scale: 1.0,
            reg: None,
            sigma_r: 0.7,
            max_ppm: 200,
            max_ipm: 100,
            krylov_budget: None,
            refresh_frac: 0.51,
            retry: true,
            stop_rule: StopRule::Practical,
            inner: InnerConfig::default(),
        }
    }
}

impl SolverOptions {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn policy(&self) -> ReusePolicy {
        let base = match self.mode {
            Mode::PcgChol => ReusePolicy::pcg(),
            _ => ReusePolicy::gmres(),
        };
        ReusePolicy {
            refresh_frac: self.refresh_frac,
            budget: self.krylov_budget.unwrap_or(base.budget),
            retry: self.retry,
        }
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Newton(#[from] NewtonError),
    #[error("invalid option: {0}")]
    InvalidOption(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Optimal,
    MaxIterations,
    Failed(String),
}

impl Status {
    /// Short label used in reports: `opt`, `max-it` or `failed`.
    pub fn label(&self) -> &'static str {
        match self {
            Status::Optimal => "opt",
            Status::MaxIterations => "max-it",
            Status::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    pub ppm_iters: usize,
    pub ipm_iters: usize,
    pub krylov_iters: usize,
    pub factorizations: usize,
    /// IPM steps taken in each outer iteration (the last may be partial).
    pub inner_per_outer: Vec<usize>,
    /// μ after every IPM step.
    pub mu_history: Vec<f64>,
    /// Norm of the unregularized natural residual at each accepted anchor.
    pub anchor_residuals: Vec<f64>,
    pub linalg: LinAlgStats,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: Status,
    /// Final iterate in the internal (standard-form) coordinates.
    pub iterate: Iterate,
    pub reg: RegParams,
    /// Objective in the coordinates of the source file.
    pub objective: f64,
    /// Relative dual residual, relative primal residual and μ at exit.
    pub measures: (f64, f64, f64),
    pub stats: SolveStats,
}

impl SolveResult {
    pub fn primal(&self, model: &QpModel) -> Vec<f64> {
        model.original_primal(&self.iterate.x)
    }
}

/// Natural residual of the unregularized problem. Slack form stacks
/// `Hx+g−Aᵀy−E y₂`, `z − max(z − y₂, 0)`, `Ax − b` and `x_C − z`.
pub fn outer_residual(p: &Problem, it: &Iterate) -> Vec<f64> {
    let plain = Problem {
        reg: RegParams {
            rho: 0.0,
            delta: 0.0,
            scale: p.reg.scale,
        },
        ..p.clone()
    };
    inner_residual(&plain, it, it)
}

/// Relative dual residual, relative primal residual and μ.
pub fn stop_measures(p: &Problem, it: &Iterate) -> (f64, f64, f64) {
    let m = p.model;
    let mut dual = m.h.matvec(&it.x).expect("length d");
    for (v, g) in dual.iter_mut().zip(&m.g) {
        *v += g;
    }
    m.a.tr_gaxpy(-1.0, &it.y, &mut dual);
    let mut primal = m.b.clone();
    m.a.gaxpy(-1.0, &it.x, &mut primal);
    match p.form {
        Formulation::Standard => {
            for (k, &j) in p.cone.iter().enumerate() {
                dual[j] -= it.s[k];
            }
        }
        Formulation::Slack => {
            for (k, &j) in p.cone.iter().enumerate() {
                dual[j] -= it.y2[k];
                dual.push(it.y2[k] - it.s[k]);
                primal.push(it.z[k] - it.x[j]);
            }
        }
    }
    (
        norm2(&dual) / norm2(&m.g).max(1.0),
        norm2(&primal) / norm2(&m.b).max(1.0),
        it.mu(p),
    )
}

/// All three relative termination tests hold.
pub fn global_stop(p: &Problem, it: &Iterate, tol: f64) -> bool {
    let (d, pr, mu) = stop_measures(p, it);
    d <= tol && pr <= tol && mu <= tol
}

fn make_backend(p: &Problem, opts: &SolverOptions) -> Result<Box<dyn LinearBackend>, SolveError> {
    Ok(match opts.mode {
        Mode::Direct => Box::new(DirectAugmented::new(p)),
        Mode::SlackDirect => Box::new(SlackDirect::new(p)),
        Mode::GmresLdl => Box::new(SlackGmres::new(p, opts.policy())),
        Mode::PcgChol => Box::new(SlackPcg::new(p, opts.policy(), opts.tol).map_err(|e| match e {
            IpmError::Newton(n) => SolveError::Newton(n),
            other => SolveError::InvalidOption(other.to_string()),
        })?),
    })
}

fn validate(opts: &SolverOptions) -> Result<(), SolveError> {
    let bad = |s: &str| Err(SolveError::InvalidOption(s.to_string()));
    if !(opts.tol > 0.0) {
        return bad("tol must be positive");
    }
    if !(opts.sigma_r > 0.0 && opts.sigma_r < 1.0) {
        return bad("sigma_r must lie in (0, 1)");
    }
    if !(opts.refresh_frac > 0.0 && opts.refresh_frac <= 1.0) {
        return bad("refresh fraction must lie in (0, 1]");
    }
    if opts.krylov_budget == Some(0) {
        return bad("Krylov budget must be positive");
    }
    if let Some(r) = opts.reg {
        if !(r.rho > 0.0 && r.delta > 0.0) {
            return bad("regularization must be positive");
        }
    }
    if let StopRule::Theoretical { tau1 } = opts.stop_rule {
        if !(tau1 > 0.0) {
            return bad("tau1 must be positive");
        }
    }
    Ok(())
}

/// Runs the proximal-point method on `model`.
///
/// Setup problems (bad options, unsupported backend) are errors; failures
/// during the iteration are reported through [`Status::Failed`].
pub fn solve(model: &QpModel, opts: &SolverOptions) -> Result<SolveResult, SolveError> {
    validate(opts)?;
    let reg = match opts.reg {
        Some(r) => r,
        None => compute_reg(model, opts.reg_scale)?,
    };
    let p = Problem::new(model, reg, opts.mode.formulation());
    let mut backend = make_backend(&p, opts)?;
    // A floored entry shrinks by at most 1−τ per step; keep tol/2 within one step.
    let inner_cfg = InnerConfig {
        max_iters: opts.max_ipm,
        warm_cap: opts.inner.warm_cap.min(0.5 * opts.tol / (1.0 - opts.inner.tau)),
        ..opts.inner
    };

    let mut stats = SolveStats::default();
    let mut it = match start_point(&p, None, &inner_cfg) {
        Ok(it) => it,
        Err(e) => {
            let it = empty_iterate(&p);
            return Ok(finish(&p, it, Status::Failed(e.to_string()), stats, backend.as_ref()));
        }
    };
    let mut anchor = it.clone();
    let status = run(&p, opts, &inner_cfg, backend.as_mut(), &mut it, &mut anchor, &mut stats);
    Ok(finish(&p, it, status, stats, backend.as_ref()))
}

fn empty_iterate(p: &Problem) -> Iterate {
    let nc = p.nc();
    let slack = p.form == Formulation::Slack;
    Iterate {
        x: vec![0.0; p.model.d()],
        z: vec![0.0; if slack { nc } else { 0 }],
        y: vec![0.0; p.model.m()],
        y2: vec![0.0; if slack { nc } else { 0 }],
        s: vec![0.0; nc],
    }
}

fn run(
    p: &Problem,
    opts: &SolverOptions,
    cfg: &InnerConfig,
    backend: &mut dyn LinearBackend,
    it: &mut Iterate,
    anchor: &mut Iterate,
    stats: &mut SolveStats,
) -> Status {
    if global_stop(p, it, opts.tol) {
        return Status::Optimal;
    }
    for k in 0..opts.max_ppm {
        if k > 0 {
            match start_point(p, Some(it), cfg) {
                Ok(w) => *it = w,
                Err(e) => return Status::Failed(e.to_string()),
            }
        }
        stats.inner_per_outer.push(0);
        stats.ppm_iters = k + 1;
        loop {
            let steps = *stats.inner_per_outer.last().expect("pushed above");
            if steps >= cfg.max_iters {
                log::warn!("subproblem {k} hit the inner iteration limit");
                return Status::MaxIterations;
            }
            match predictor_corrector_step(p, it, anchor, backend, cfg) {
                Ok(info) => log::trace!(
                    "  step: alpha ({:.2e}, {:.2e}) sigma {:.2e} mu {:.3e}",
                    info.alpha_p,
                    info.alpha_d,
                    info.sigma,
                    info.mu_after
                ),
                Err(e) => {
                    log::warn!("outer iteration {k}: {e}");
                    return Status::Failed(e.to_string());
                }
            }
            *stats.inner_per_outer.last_mut().expect("pushed above") += 1;
            stats.ipm_iters += 1;
            stats.mu_history.push(it.mu(p));
            if global_stop(p, it, opts.tol) {
                return Status::Optimal;
            }
            let r = norm2(&inner_residual(p, it, anchor));
            let disp = it.distance(anchor);
            let accept = match opts.stop_rule {
                StopRule::Practical => inner_stop(r, disp, k, opts.sigma_r),
                StopRule::Theoretical { tau1 } => inner_stop_theoretical(r, disp, k, opts.sigma_r, p.reg, tau1),
                StopRule::Exact { tol } => r <= tol,
            };
            if accept || r <= 0.1 * opts.tol {
                break;
            }
        }
        *anchor = it.clone();
        stats.anchor_residuals.push(norm2(&outer_residual(p, it)));
        log::debug!(
            "outer {k}: {} inner steps, mu {:.3e}, residual {:.3e}, measures {:?}",
            stats.inner_per_outer[k],
            it.mu(p),
            stats.anchor_residuals[k],
            stop_measures(p, it)
        );
    }
    Status::MaxIterations
}

fn finish(p: &Problem, it: Iterate, status: Status, mut stats: SolveStats, backend: &dyn LinearBackend) -> SolveResult {
    let ls = backend.stats().clone();
    stats.krylov_iters = ls.krylov_iters;
    stats.factorizations = ls.factorizations;
    stats.linalg = ls;
    let measures = stop_measures(p, &it);
    SolveResult {
        status,
        objective: p.model.objective(&it.x),
        iterate: it,
        reg: p.reg,
        measures,
        stats,
    }
}
