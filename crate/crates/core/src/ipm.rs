//! Infeasible Mehrotra predictor-corrector for one proximal subproblem.
//!
//! The subproblem at anchor `(x_k, y_k)` is
//! `min ½xᵀHx + gᵀx + ρ/2‖x − x_k‖² + δ/2‖y‖²  s.t. Ax + δ(y − y_k) = b, x_C ≥ 0`,
//! written in either the standard or the slack (`x_C = z`) formulation.

use thiserror::Error;

use crate::backend::LinearBackend;
use crate::krylov::KrylovError;
use crate::ldl::{factorize_spd, LdlError};
use crate::model::{QpModel, RegParams};
use crate::newton::{NewtonError, NewtonRhs, Step};
use crate::sparse::{ata_plus_diag, dot, norm2, DiagMat};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IpmError {
    #[error(transparent)]
    Newton(#[from] NewtonError),
    #[error(transparent)]
    Ldl(#[from] LdlError),
    #[error(transparent)]
    Krylov(#[from] KrylovError),
    #[error("Krylov solve did not converge after a preconditioner refresh ({iterations} iterations, residual {residual:.3e})")]
    KrylovFailed { iterations: usize, residual: f64 },
    #[error("step length {alpha:.3e} below 1e-10")]
    StalledStep { alpha: f64 },
    #[error("non-finite values in the iterate")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    /// Sign constraints act on `x_C` directly.
    Standard,
    /// Sign constraints act on a copy `z = x_C`.
    Slack,
}

/// A model with its regularization and formulation.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub model: &'a QpModel,
    pub cone: Vec<usize>,
    pub reg: RegParams,
    pub form: Formulation,
}

impl<'a> Problem<'a> {
    pub fn new(model: &'a QpModel, reg: RegParams, form: Formulation) -> Self {
        Problem {
            model,
            cone: model.cone_indices(),
            reg,
            form,
        }
    }

    pub fn nc(&self) -> usize {
        self.cone.len()
    }
}

/// Primal-dual point. `z` and `y2` are empty in the standard formulation;
/// `s` always has one entry per cone variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub y2: Vec<f64>,
    pub s: Vec<f64>,
}

impl Iterate {
    /// The sign-constrained primal block: `x_C` or `z`.
    pub fn cone_primal(&self, p: &Problem) -> Vec<f64> {
        match p.form {
            Formulation::Standard => p.cone.iter().map(|&j| self.x[j]).collect(),
            Formulation::Slack => self.z.clone(),
        }
    }

    pub fn mu(&self, p: &Problem) -> f64 {
        if p.nc() == 0 {
            return 0.0;
        }
        dot(&self.cone_primal(p), &self.s) / p.nc() as f64
    }

    pub fn is_finite(&self) -> bool {
        [&self.x, &self.z, &self.y, &self.y2, &self.s]
            .iter()
            .all(|v| v.iter().all(|t| t.is_finite()))
    }

    /// Euclidean distance in the `(x, z, y, y2)` blocks.
    pub fn distance(&self, other: &Iterate) -> f64 {
        let mut acc = 0.0;
        for (a, b) in [(&self.x, &other.x), (&self.z, &other.z), (&self.y, &other.y), (&self.y2, &other.y2)] {
            acc += a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
        }
        acc.sqrt()
    }

    pub fn apply(&mut self, st: &Step, alpha_p: f64, alpha_d: f64) {
        for (v, d) in self.x.iter_mut().zip(&st.dx) {
            *v += alpha_p * d;
        }
        for (v, d) in self.z.iter_mut().zip(&st.dz) {
            *v += alpha_p * d;
        }
        for (v, d) in self.y.iter_mut().zip(&st.dy) {
            *v += alpha_d * d;
        }
        for (v, d) in self.y2.iter_mut().zip(&st.dy2) {
            *v += alpha_d * d;
        }
        for (v, d) in self.s.iter_mut().zip(&st.ds) {
            *v += alpha_d * d;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerConfig {
    /// Fraction-to-boundary factor.
    pub tau: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub max_iters: usize,
    /// Warm-start entries of `x_C`/`z`/`s` below `warm_floor · max(1, μ)` are raised to it.
    pub warm_floor: f64,
    /// Upper limit on that floor, so one step can still bring μ below the target.
    pub warm_cap: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            tau: 0.995,
            sigma_min: 1e-8,
            sigma_max: 0.5,
            max_iters: 100,
            warm_floor: 1e-4,
            warm_cap: f64::INFINITY,
        }
    }
}

/// `Hx + g − Aᵀy`.
fn lagrangian_grad(m: &QpModel, x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut v = m.h.matvec(x).expect("length d");
    for (vi, gi) in v.iter_mut().zip(&m.g) {
        *vi += gi;
    }
    m.a.tr_gaxpy(-1.0, y, &mut v);
    v
}

/// `Ax − b`.
fn primal_res(m: &QpModel, x: &[f64]) -> Vec<f64> {
    let mut v = m.a.matvec(x).expect("length d");
    for (vi, bi) in v.iter_mut().zip(&m.b) {
        *vi -= bi;
    }
    v
}

/// `−F_k` at the iterate with complementarity target `σμ` (rc = σμ − x∘s).
pub fn newton_rhs(p: &Problem, it: &Iterate, anchor: &Iterate, sigma_mu: f64) -> NewtonRhs {
    let m = p.model;
    let (rho, delta) = (p.reg.rho, p.reg.delta);
    let mut rd = lagrangian_grad(m, &it.x, &it.y);
    for j in 0..m.d() {
        rd[j] += rho * (it.x[j] - anchor.x[j]);
    }
    let mut rp = primal_res(m, &it.x);
    for i in 0..m.m() {
        rp[i] += delta * (it.y[i] - anchor.y[i]);
    }
    let nc = p.nc();
    let cp = it.cone_primal(p);
    let rc: Vec<f64> = (0..nc).map(|k| sigma_mu - cp[k] * it.s[k]).collect();
    let (mut rz, mut rp2) = (Vec::new(), Vec::new());
    match p.form {
        Formulation::Standard => {
            for (k, &j) in p.cone.iter().enumerate() {
                rd[j] -= it.s[k];
            }
        }
        Formulation::Slack => {
            rz = vec![0.0; nc];
            rp2 = vec![0.0; nc];
            for (k, &j) in p.cone.iter().enumerate() {
                rd[j] -= it.y2[k];
                rz[k] = -(rho * (it.z[k] - anchor.z[k]) + it.y2[k] - it.s[k]);
                rp2[k] = -(it.x[j] - it.z[k] + delta * (it.y2[k] - anchor.y2[k]));
            }
        }
    }
    let neg = |v: Vec<f64>| v.into_iter().map(|t| -t).collect::<Vec<f64>>();
    NewtonRhs {
        rd: neg(rd),
        rz,
        rp: neg(rp),
        rp2,
        rc,
    }
}

/// Natural residual of the regularized subproblem at the anchor.
pub fn inner_residual(p: &Problem, it: &Iterate, anchor: &Iterate) -> Vec<f64> {
    let m = p.model;
    let (rho, delta) = (p.reg.rho, p.reg.delta);
    let mut grad = lagrangian_grad(m, &it.x, &it.y);
    for j in 0..m.d() {
        grad[j] += rho * (it.x[j] - anchor.x[j]);
    }
    let mut rp = primal_res(m, &it.x);
    for i in 0..m.m() {
        rp[i] += delta * (it.y[i] - anchor.y[i]);
    }
    match p.form {
        Formulation::Standard => {
            for &j in &p.cone {
                grad[j] = it.x[j] - (it.x[j] - grad[j]).max(0.0);
            }
            grad.extend(rp);
            grad
        }
        Formulation::Slack => {
            let nc = p.nc();
            let mut zb = vec![0.0; nc];
            let mut cb = vec![0.0; nc];
            for (k, &j) in p.cone.iter().enumerate() {
                grad[j] -= it.y2[k];
                let inner = rho * (it.z[k] - anchor.z[k]) + it.y2[k];
                zb[k] = it.z[k] - (it.z[k] - inner).max(0.0);
                cb[k] = it.x[j] - it.z[k] + delta * (it.y2[k] - anchor.y2[k]);
            }
            grad.extend(zb);
            grad.extend(rp);
            grad.extend(cb);
            grad
        }
    }
}

/// Practical inexactness test `‖r_k‖ < 10⁴ σ_r^k min(1, displacement)`.
pub fn inner_stop(r_norm: f64, displacement: f64, k: usize, sigma_r: f64) -> bool {
    r_norm < 1e4 * sigma_r.powi(k as i32) * displacement.min(1.0)
}

/// Theoretical test `‖r_k‖ < min(ρ,δ)/τ₁ σ_r^k min(1, displacement)`.
pub fn inner_stop_theoretical(r_norm: f64, displacement: f64, k: usize, sigma_r: f64, reg: RegParams, tau1: f64) -> bool {
    r_norm < reg.rho.min(reg.delta) / tau1 * sigma_r.powi(k as i32) * displacement.min(1.0)
}

/// Largest `α ≤ 1` with `v + α·dv ≥ (1−τ)·v`, i.e. `τ` times the distance to the boundary.
pub fn fraction_to_boundary(v: &[f64], dv: &[f64], tau: f64) -> f64 {
    let mut alpha = 1.0f64;
    for (vi, di) in v.iter().zip(dv) {
        if *di < 0.0 {
            alpha = alpha.min(-tau * vi / di);
        }
    }
    alpha
}

/// Mean of `(v + α_p dv)∘(s + α_d ds)`.
fn trial_mu(v: &[f64], dv: &[f64], s: &[f64], ds: &[f64], alpha_p: f64, alpha_d: f64) -> f64 {
    let n = v.len().max(1) as f64;
    (0..v.len())
        .map(|k| (v[k] + alpha_p * dv[k]) * (s[k] + alpha_d * ds[k]))
        .sum::<f64>()
        / n
}

/// `(μ_aff/μ)³` clipped to `[lo, hi]`.
pub fn sigma_rule(mu_aff: f64, mu: f64, lo: f64, hi: f64) -> f64 {
    let r = mu_aff / mu;
    (r * r * r).clamp(lo, hi)
}

/// Cold start from the least-squares point, or warm start from a previous iterate.
pub fn start_point(p: &Problem, warm: Option<&Iterate>, cfg: &InnerConfig) -> Result<Iterate, IpmError> {
    if let Some(w) = warm {
        return Ok(warm_start(p, w, cfg));
    }
    let m = p.model;
    let d = m.d();
    let delta = p.reg.delta;
    let (x, y) = if m.m() > 0 {
        let aat = ata_plus_diag(&m.a, &DiagMat(vec![1.0; d]), &DiagMat(vec![delta; m.m()]))
            .expect("dimensions from the model");
        let f = factorize_spd(&aat, None)?;
        let t = f.solve(&m.b)?;
        let x = m.a.tr_matvec(&t).expect("length m");
        let mut gh = m.h.matvec(&x).expect("length d");
        for (v, g) in gh.iter_mut().zip(&m.g) {
            *v += g;
        }
        let y = f.solve(&m.a.matvec(&gh).expect("length d"))?;
        (x, y)
    } else {
        (vec![0.0; d], Vec::new())
    };
    let grad = lagrangian_grad(m, &x, &y);
    let mut xc: Vec<f64> = p.cone.iter().map(|&j| x[j]).collect();
    let mut s: Vec<f64> = p.cone.iter().map(|&j| grad[j]).collect();
    if !xc.is_empty() {
        let dx = (-1.5 * xc.iter().copied().fold(f64::INFINITY, f64::min)).max(0.0);
        let ds = (-1.5 * s.iter().copied().fold(f64::INFINITY, f64::min)).max(0.0);
        xc.iter_mut().for_each(|v| *v += dx);
        s.iter_mut().for_each(|v| *v += ds);
        let xs = dot(&xc, &s);
        let sx: f64 = xc.iter().sum();
        let ss: f64 = s.iter().sum();
        let dx2 = if ss > 0.0 { 0.5 * xs / ss } else { 0.0 };
        let ds2 = if sx > 0.0 { 0.5 * xs / sx } else { 0.0 };
        xc.iter_mut().for_each(|v| *v += dx2);
        s.iter_mut().for_each(|v| *v += ds2);
        // Degenerate data (e.g. b = 0 and g = 0) can leave zeros.
        for v in xc.iter_mut().chain(s.iter_mut()) {
            if !(*v > 0.0) {
                *v = 1.0;
            }
        }
    }
    let mut x = x;
    for (k, &j) in p.cone.iter().enumerate() {
        x[j] = xc[k];
    }
    let it = match p.form {
        Formulation::Standard => Iterate {
            x,
            z: Vec::new(),
            y,
            y2: Vec::new(),
            s,
        },
        Formulation::Slack => Iterate {
            x,
            z: xc,
            y,
            y2: s.clone(),
            s,
        },
    };
    if !it.is_finite() {
        return Err(IpmError::NonFinite);
    }
    Ok(it)
}

fn warm_start(p: &Problem, w: &Iterate, cfg: &InnerConfig) -> Iterate {
    let mut it = w.clone();
    let floor = (cfg.warm_floor * w.mu(p).max(1.0)).min(cfg.warm_cap);
    match p.form {
        Formulation::Standard => {
            for &j in &p.cone {
                if it.x[j] < floor {
                    it.x[j] = floor;
                }
            }
        }
        Formulation::Slack => {
            for v in it.z.iter_mut() {
                if *v < floor {
                    *v = floor;
                }
            }
        }
    }
    for v in it.s.iter_mut() {
        if *v < floor {
            *v = floor;
        }
    }
    it
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub alpha_p: f64,
    pub alpha_d: f64,
    pub sigma: f64,
    pub mu_before: f64,
    pub mu_after: f64,
}

fn cone_step(p: &Problem, st: &Step) -> Vec<f64> {
    match p.form {
        Formulation::Standard => p.cone.iter().map(|&j| st.dx[j]).collect(),
        Formulation::Slack => st.dz.clone(),
    }
}

/// One predictor-corrector iteration. All Newton solves of the step share the backend
/// state prepared for this iterate.
pub fn predictor_corrector_step(
    p: &Problem,
    it: &mut Iterate,
    anchor: &Iterate,
    backend: &mut dyn LinearBackend,
    cfg: &InnerConfig,
) -> Result<StepInfo, IpmError> {
    let nc = p.nc();
    let mu = it.mu(p);
    backend.prepare(p, it, mu)?;

    let base = newton_rhs(p, it, anchor, 0.0);
    let aff = backend.solve(p, it, &base, mu)?;
    let cp = it.cone_primal(p);
    let dcp = cone_step(p, &aff);

    let (sigma, mut corr) = if nc > 0 {
        let ap = fraction_to_boundary(&cp, &dcp, 1.0);
        let ad = fraction_to_boundary(&it.s, &aff.ds, 1.0);
        let mu_aff = trial_mu(&cp, &dcp, &it.s, &aff.ds, ap, ad);
        let sigma = sigma_rule(mu_aff, mu, cfg.sigma_min, cfg.sigma_max);
        let mut rhs = base;
        for k in 0..nc {
            rhs.rc[k] = sigma * mu - cp[k] * it.s[k] - dcp[k] * aff.ds[k];
        }
        (sigma, backend.solve(p, it, &rhs, mu)?)
    } else {
        (0.0, aff)
    };

    let mut dcp = cone_step(p, &corr);
    let mut alpha_p = fraction_to_boundary(&cp, &dcp, cfg.tau);
    let mut alpha_d = fraction_to_boundary(&it.s, &corr.ds, cfg.tau);
    if nc > 0 && trial_mu(&cp, &dcp, &it.s, &corr.ds, alpha_p, alpha_d) > mu {
        // The second-order term can push μ up; fall back to the centering
        // direction, whose equal-length steps reduce μ for small α.
        corr = backend.solve(p, it, &newton_rhs(p, it, anchor, sigma * mu), mu)?;
        dcp = cone_step(p, &corr);
        alpha_p = fraction_to_boundary(&cp, &dcp, cfg.tau);
        alpha_d = fraction_to_boundary(&it.s, &corr.ds, cfg.tau);
        if trial_mu(&cp, &dcp, &it.s, &corr.ds, alpha_p, alpha_d) > mu {
            let mut a = alpha_p.min(alpha_d);
            while a > 1e-12 && trial_mu(&cp, &dcp, &it.s, &corr.ds, a, a) > mu {
                a *= 0.5;
            }
            alpha_p = a;
            alpha_d = a;
        }
    }
    backend.finish_step();

    if alpha_p.max(alpha_d) < 1e-10 {
        return Err(IpmError::StalledStep {
            alpha: alpha_p.max(alpha_d),
        });
    }
    it.apply(&corr, alpha_p, alpha_d);
    if !it.is_finite() {
        return Err(IpmError::NonFinite);
    }
    Ok(StepInfo {
        alpha_p,
        alpha_d,
        sigma,
        mu_before: mu,
        mu_after: it.mu(p),
    })
}

/// Runs predictor-corrector steps until `‖r_k‖ ≤ tol` (or the step budget runs out).
/// Returns the number of steps taken and whether the tolerance was met.
pub fn solve_subproblem(
    p: &Problem,
    it: &mut Iterate,
    anchor: &Iterate,
    backend: &mut dyn LinearBackend,
    cfg: &InnerConfig,
    tol: f64,
) -> Result<(usize, bool), IpmError> {
    for n in 0..cfg.max_iters {
        if norm2(&inner_residual(p, it, anchor)) <= tol && it.mu(p) <= tol {
            return Ok((n, true));
        }
        predictor_corrector_step(p, it, anchor, backend, cfg)?;
    }
    let ok = norm2(&inner_residual(p, it, anchor)) <= tol && it.mu(p) <= tol;
    Ok((cfg.max_iters, ok))
}
