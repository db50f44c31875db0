//! Restarted GMRES (right preconditioned) and preconditioned CG.
//!
//! Operators are passed as closures `f(input, output)` that overwrite `output`.
//! Iteration counts equal the number of operator applications made inside the
//! Krylov recurrences; the residual checks at restarts and at exit are not counted.

use thiserror::Error;

use crate::sparse::{axpy, dot, norm2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KrylovError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operator is not positive definite: pᵀMp = {curvature:.3e} at iteration {iteration}")]
    NotPositiveDefinite { iteration: usize, curvature: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KrylovMethod {
    Gmres,
    Pcg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovConfig {
    pub method: KrylovMethod,
    /// Restart length; ignored by PCG.
    pub restart: usize,
    pub max_iters: usize,
    /// Absolute tolerance on the 2-norm of `rhs - M x`.
    pub tol: f64,
}

impl KrylovConfig {
    pub fn gmres(restart: usize, max_iters: usize, tol: f64) -> Self {
        KrylovConfig {
            method: KrylovMethod::Gmres,
            restart,
            max_iters,
            tol,
        }
    }

    pub fn pcg(max_iters: usize, tol: f64) -> Self {
        KrylovConfig {
            method: KrylovMethod::Pcg,
            restart: max_iters.max(1),
            max_iters,
            tol,
        }
    }

    fn validate(&self) -> Result<(), KrylovError> {
        if self.restart == 0 {
            return Err(KrylovError::InvalidConfig("restart must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(KrylovError::InvalidConfig("tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrylovOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// True residual norm `‖rhs − M x‖₂` at exit.
    pub residual_norm: f64,
    pub converged: bool,
    /// Residual estimates after each inner iteration (GMRES) or recurrence residuals (PCG).
    pub history: Vec<f64>,
}

fn true_residual(apply_m: &mut impl FnMut(&[f64], &mut [f64]), x: &[f64], rhs: &[f64], tmp: &mut [f64]) -> Vec<f64> {
    apply_m(x, tmp);
    rhs.iter().zip(tmp.iter()).map(|(b, mx)| b - mx).collect()
}

/// Restarted GMRES with right preconditioning: solves `M P⁻¹ u = rhs`, `x = P⁻¹ u`.
/// `apply_p` applies the preconditioner inverse.
pub fn gmres(
    mut apply_m: impl FnMut(&[f64], &mut [f64]),
    mut apply_p: impl FnMut(&[f64], &mut [f64]),
    rhs: &[f64],
    cfg: &KrylovConfig,
) -> Result<KrylovOutcome, KrylovError> {
    cfg.validate()?;
    if cfg.method != KrylovMethod::Gmres {
        return Err(KrylovError::InvalidConfig("gmres called with a non-GMRES configuration"));
    }
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut rnorm = norm2(&r);
    let mut iterations = 0;
    let mut history = Vec::new();
    let mut tmp = vec![0.0; n];
    let mut z = vec![0.0; n];

    while rnorm > cfg.tol && iterations < cfg.max_iters {
        let m = cfg.restart.min(cfg.max_iters - iterations);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / rnorm).collect());
        // Hessenberg columns after rotation, and the rotated rhs.
        let mut hcols: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<f64> = Vec::with_capacity(m);
        let mut g = vec![0.0; m + 1];
        g[0] = rnorm;
        let mut k = 0;
        let mut broke_down = false;
        while k < m {
            apply_p(&basis[k], &mut z);
            let mut w = vec![0.0; n];
            apply_m(&z, &mut w);
            iterations += 1;
            let before = norm2(&w);
            let mut h = vec![0.0; k + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                h[i] = hij;
                axpy(-hij, v, &mut w);
            }
            let mut after = norm2(&w);
            if after > 0.0 && f64::EPSILON * before / after > 1e-8 {
                for (i, v) in basis.iter().enumerate() {
                    let c = dot(&w, v);
                    h[i] += c;
                    axpy(-c, v, &mut w);
                }
                after = norm2(&w);
            }
            h[k + 1] = after;
            for i in 0..k {
                let t = cs[i] * h[i] + sn[i] * h[i + 1];
                h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1];
                h[i] = t;
            }
            let denom = h[k].hypot(h[k + 1]);
            let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (h[k] / denom, h[k + 1] / denom) };
            h[k] = denom;
            h[k + 1] = 0.0;
            cs.push(c);
            sn.push(s);
            g[k + 1] = -s * g[k];
            g[k] *= c;
            hcols.push(h);
            k += 1;
            let est = g[k].abs();
            history.push(est);
            broke_down = after <= 1e-14 * before.max(f64::MIN_POSITIVE);
            if est <= cfg.tol || broke_down {
                break;
            }
            basis.push(w.iter().map(|v| v / after).collect());
        }
        // Back substitution for the k-dimensional least squares problem.
        let mut yk = vec![0.0; k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for j in i + 1..k {
                acc -= hcols[j][i] * yk[j];
            }
            yk[i] = if hcols[i][i] != 0.0 { acc / hcols[i][i] } else { 0.0 };
        }
        let mut u = vec![0.0; n];
        for (j, yj) in yk.iter().enumerate() {
            axpy(*yj, &basis[j], &mut u);
        }
        apply_p(&u, &mut z);
        axpy(1.0, &z, &mut x);
        r = true_residual(&mut apply_m, &x, rhs, &mut tmp);
        rnorm = norm2(&r);
        if broke_down {
            // The Krylov space is exhausted; a restart would rebuild the same space.
            break;
        }
    }
    Ok(KrylovOutcome {
        solution: x,
        iterations,
        residual_norm: rnorm,
        converged: rnorm <= cfg.tol,
        history,
    })
}

/// Preconditioned conjugate gradients. `apply_p` applies the preconditioner inverse.
pub fn pcg(
    mut apply_m: impl FnMut(&[f64], &mut [f64]),
    mut apply_p: impl FnMut(&[f64], &mut [f64]),
    rhs: &[f64],
    cfg: &KrylovConfig,
) -> Result<KrylovOutcome, KrylovError> {
    cfg.validate()?;
    if cfg.method != KrylovMethod::Pcg {
        return Err(KrylovError::InvalidConfig("pcg called with a non-PCG configuration"));
    }
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut rnorm = norm2(&r);
    let mut iterations = 0;
    let mut history = Vec::new();
    let mut tmp = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];

    // The outer loop restarts the recurrence from the true residual when the
    // recurrence claims convergence that the true residual does not confirm.
    while rnorm > cfg.tol && iterations < cfg.max_iters {
        apply_p(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < cfg.max_iters {
            apply_m(&p, &mut q);
            iterations += 1;
            let curv = dot(&p, &q);
            if !(curv > 0.0) {
                return Err(KrylovError::NotPositiveDefinite {
                    iteration: iterations,
                    curvature: curv,
                });
            }
            let alpha = rz / curv;
            axpy(alpha, &p, &mut x);
            axpy(-alpha, &q, &mut r);
            let est = norm2(&r);
            history.push(est);
            if est <= cfg.tol {
                break;
            }
            apply_p(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
        }
        r = true_residual(&mut apply_m, &x, rhs, &mut tmp);
        rnorm = norm2(&r);
    }
    Ok(KrylovOutcome {
        solution: x,
        iterations,
        residual_norm: rnorm,
        converged: rnorm <= cfg.tol,
        history,
    })
}
