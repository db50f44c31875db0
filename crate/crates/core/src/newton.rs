//! Newton systems of the regularized subproblem and their block solves.
//!
//! Three shapes are used:
//! - the augmented system `[[H+ρI+Θ†, Aᵀ],[A, −δI]]` over `(Δx, −Δy)` for the
//!   standard formulation;
//! - the Schur complement `S(Θ) = [[H+ρI+W(Θ), Aᵀ],[A, −δI]]` of the slack
//!   formulation, where `W = diag(w)` is bounded in `(ρ/(δρ+1), 1/δ)`;
//! - the SPD normal form `δI + A·diag(u)·Aᵀ` of `S(Θ)` when `H` is diagonal.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::ipm::{Formulation, Iterate, Problem};
use crate::model::RegParams;
use crate::sparse::{CscMatrix, NormalPattern, SymMatrix};

pub const THETA_INV_MIN: f64 = 1e-16;
pub const THETA_INV_MAX: f64 = 1e16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NewtonError {
    #[error("nonpositive complementarity pair at cone index {0}")]
    NonPositivePair(usize),
    #[error("reduced normal equations need a diagonal H")]
    UnsupportedReduction,
    #[error("instance too large for the dense check ({0} rows)")]
    TooLarge(usize),
    #[error("dense factorization failed in the spectral check")]
    Singular,
    #[error("eigenvalue iteration did not converge in the spectral check")]
    NoConvergence,
}

/// Right-hand side `−F` of a Newton system, block by block.
/// `rz` and `rp2` are empty in the standard formulation.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonRhs {
    pub rd: Vec<f64>,
    pub rz: Vec<f64>,
    pub rp: Vec<f64>,
    pub rp2: Vec<f64>,
    pub rc: Vec<f64>,
}

impl NewtonRhs {
    pub fn inf_norm(&self) -> f64 {
        [&self.rd, &self.rz, &self.rp, &self.rp2, &self.rc]
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

/// A Newton direction; `dz` and `dy2` are empty in the standard formulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub dx: Vec<f64>,
    pub dz: Vec<f64>,
    pub dy: Vec<f64>,
    pub dy2: Vec<f64>,
    pub ds: Vec<f64>,
}

/// `1/(δ + 1/(θ⁻¹ + ρ))`.
pub fn schur_diag_entry(theta_inv: f64, rho: f64, delta: f64) -> f64 {
    1.0 / (delta + 1.0 / (theta_inv + rho))
}

pub fn schur_diag(theta_inv: &[f64], rho: f64, delta: f64) -> Vec<f64> {
    theta_inv.iter().map(|&t| schur_diag_entry(t, rho, delta)).collect()
}

/// Change of the Schur diagonal entry when `θ⁻¹` moves to `θ̂⁻¹`, in closed form.
pub fn d_a_entry(theta_hat_inv: f64, theta_inv: f64, rho: f64, delta: f64) -> f64 {
    let a = theta_inv + rho;
    let ah = theta_hat_inv + rho;
    (theta_hat_inv - theta_inv) / (1.0 + delta * delta * a * ah + delta * a + delta * ah)
}

/// Diagonal changes `(Δ₁, Δ₂)` of the normal-equation weights: `Δ₂` for
/// `(ρ+θ⁻¹)⁻¹` and `Δ₁` for `(ρ + w(θ))⁻¹`.
pub fn reduced_delta_entries(theta_hat_inv: f64, theta_inv: f64, rho: f64, delta: f64) -> (f64, f64) {
    let a = theta_inv + rho;
    let ah = theta_hat_inv + rho;
    let d2 = (theta_hat_inv - theta_inv) / (ah * a);
    let d1 = d2 / ((rho * (delta + 1.0 / ah) + 1.0) * (rho * (delta + 1.0 / a) + 1.0));
    (d1, d2)
}

/// Clamps `θ⁻¹` into `[1e-16, 1e16]`, returning how many entries were moved.
pub fn clamp_theta_inv(v: &mut [f64]) -> usize {
    let mut n = 0;
    for t in v.iter_mut() {
        let c = t.clamp(THETA_INV_MIN, THETA_INV_MAX);
        if c != *t {
            n += 1;
            *t = c;
        }
    }
    n
}

/// `[[H + diag(top), Aᵀ],[A, −diag(bottom)]]` with a pattern fixed at construction.
/// Only the `d + m` diagonal values change afterwards.
#[derive(Debug, Clone)]
pub struct SaddleMatrix {
    mat: SymMatrix,
    diag_pos: Vec<usize>,
    h_diag: Vec<f64>,
    d: usize,
}

impl SaddleMatrix {
    pub fn new(h: &CscMatrix, a: &CscMatrix) -> Self {
        let d = a.ncols();
        let m = a.nrows();
        let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(h.nnz() + a.nnz() + d + m);
        for j in 0..d + m {
            t.push((j, j, 0.0));
        }
        for (i, j, v) in h.triplets() {
            if i >= j {
                t.push((i, j, v));
            }
        }
        for (i, j, v) in a.triplets() {
            t.push((d + i, j, v));
        }
        let mat = SymMatrix::from_triplets(d + m, &t).expect("valid indices");
        let diag_pos = mat.diagonal_positions().into_iter().map(|p| p.expect("diagonal present")).collect();
        SaddleMatrix {
            mat,
            diag_pos,
            h_diag: h.diagonal(),
            d,
        }
    }

    pub fn set_diagonals(&mut self, top: &[f64], bottom: &[f64]) {
        assert_eq!(top.len(), self.d);
        let vals = self.mat.lower_mut().values_mut();
        for (j, t) in top.iter().enumerate() {
            vals[self.diag_pos[j]] = self.h_diag[j] + t;
        }
        for (i, b) in bottom.iter().enumerate() {
            vals[self.diag_pos[self.d + i]] = -b;
        }
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.mat
    }
    pub fn d(&self) -> usize {
        self.d
    }
}

/// Augmented system of the standard formulation.
#[derive(Debug, Clone)]
pub struct AugSystem {
    pub matrix: SaddleMatrix,
    /// `Θ†` restricted to the cone (`s / x_C`).
    pub theta_dag: Vec<f64>,
}

impl AugSystem {
    pub fn new(p: &Problem) -> Self {
        AugSystem {
            matrix: SaddleMatrix::new(&p.model.h, &p.model.a),
            theta_dag: vec![0.0; p.cone.len()],
        }
    }

    /// Refreshes `Θ†` and the diagonal from the iterate.
    pub fn update(&mut self, p: &Problem, it: &Iterate) -> Result<usize, NewtonError> {
        for (k, &j) in p.cone.iter().enumerate() {
            if !(it.x[j] > 0.0 && it.s[k] > 0.0) {
                return Err(NewtonError::NonPositivePair(k));
            }
            self.theta_dag[k] = it.s[k] / it.x[j];
        }
        let clamped = clamp_theta_inv(&mut self.theta_dag);
        let mut top = vec![p.reg.rho; p.model.d()];
        for (k, &j) in p.cone.iter().enumerate() {
            top[j] += self.theta_dag[k];
        }
        self.matrix.set_diagonals(&top, &vec![p.reg.delta; p.model.m()]);
        Ok(clamped)
    }

    /// `[ξ_d + E X⁻¹ ξ_c ; ξ_p]`.
    pub fn rhs(&self, p: &Problem, it: &Iterate, r: &NewtonRhs) -> Vec<f64> {
        let mut v = r.rd.clone();
        for (k, &j) in p.cone.iter().enumerate() {
            v[j] += r.rc[k] / it.x[j];
        }
        v.extend_from_slice(&r.rp);
        v
    }

    /// Recovers `(Δx, Δy, Δs)` from the solution `(Δx, −Δy)`.
    pub fn recover(&self, p: &Problem, it: &Iterate, r: &NewtonRhs, sol: &[f64]) -> Step {
        let d = p.model.d();
        let dx = sol[..d].to_vec();
        let dy = sol[d..].iter().map(|v| -v).collect();
        let ds = p
            .cone
            .iter()
            .enumerate()
            .map(|(k, &j)| (r.rc[k] - it.s[k] * dx[j]) / it.x[j])
            .collect();
        Step {
            dx,
            dz: Vec::new(),
            dy,
            dy2: Vec::new(),
            ds,
        }
    }
}

/// Block elimination of the slack-formulation Newton system onto `S(Θ)`.
#[derive(Debug, Clone)]
pub struct SlackNewton {
    pub schur: SaddleMatrix,
    /// Clamped `θ⁻¹ = s / z` on the cone.
    pub theta_inv: Vec<f64>,
    /// `w(θ)` on the cone.
    pub w: Vec<f64>,
    rho: f64,
    delta: f64,
}

impl SlackNewton {
    pub fn new(p: &Problem) -> Self {
        SlackNewton {
            schur: SaddleMatrix::new(&p.model.h, &p.model.a),
            theta_inv: vec![0.0; p.cone.len()],
            w: vec![0.0; p.cone.len()],
            rho: p.reg.rho,
            delta: p.reg.delta,
        }
    }

    pub fn update(&mut self, p: &Problem, it: &Iterate) -> Result<usize, NewtonError> {
        for k in 0..p.cone.len() {
            if !(it.z[k] > 0.0 && it.s[k] > 0.0) {
                return Err(NewtonError::NonPositivePair(k));
            }
            self.theta_inv[k] = it.s[k] / it.z[k];
        }
        let clamped = clamp_theta_inv(&mut self.theta_inv);
        self.set_theta_inv_clamped(p);
        Ok(clamped)
    }

    /// Sets `θ⁻¹` directly (already clamped) and reassembles the diagonal.
    pub fn set_theta_inv(&mut self, p: &Problem, theta_inv: &[f64]) {
        self.theta_inv.copy_from_slice(theta_inv);
        clamp_theta_inv(&mut self.theta_inv);
        self.set_theta_inv_clamped(p);
    }

    fn set_theta_inv_clamped(&mut self, p: &Problem) {
        self.w = schur_diag(&self.theta_inv, self.rho, self.delta);
        let mut top = vec![self.rho; p.model.d()];
        for (k, &j) in p.cone.iter().enumerate() {
            top[j] += self.w[k];
        }
        self.schur.set_diagonals(&top, &vec![self.delta; p.model.m()]);
    }

    /// Diagonal `H_ii + ρ + w_i` (0 weight on free variables).
    pub fn primal_diag(&self, p: &Problem) -> Vec<f64> {
        let hd = p.model.h.diagonal();
        let mut v: Vec<f64> = hd.iter().map(|h| h + self.rho).collect();
        for (k, &j) in p.cone.iter().enumerate() {
            v[j] += self.w[k];
        }
        v
    }

    fn rz_full(&self, it: &Iterate, r: &NewtonRhs) -> Vec<f64> {
        (0..self.w.len()).map(|k| r.rz[k] + r.rc[k] / it.z[k]).collect()
    }

    /// Right-hand side `(r_x, r_y)` of `S(Θ) [Δx; −Δy₁] = (r_x, r_y)`.
    pub fn schur_rhs(&self, p: &Problem, it: &Iterate, r: &NewtonRhs) -> (Vec<f64>, Vec<f64>) {
        let rz = self.rz_full(it, r);
        let mut rx = r.rd.clone();
        for (k, &j) in p.cone.iter().enumerate() {
            let a = self.theta_inv[k] + self.rho;
            rx[j] += (rz[k] + a * r.rp2[k]) / (a * self.delta + 1.0);
        }
        (rx, r.rp.clone())
    }

    /// Closed-form solve of the diagonal 2×2 blocks for `(Δz, Δy₂)`, then `Δs`.
    pub fn back_substitute(&self, p: &Problem, it: &Iterate, r: &NewtonRhs, dx: Vec<f64>, v: &[f64]) -> Step {
        let rz = self.rz_full(it, r);
        let nc = p.cone.len();
        let mut dz = vec![0.0; nc];
        let mut dy2 = vec![0.0; nc];
        let mut ds = vec![0.0; nc];
        for (k, &j) in p.cone.iter().enumerate() {
            let a = self.theta_inv[k] + self.rho;
            let u2 = self.w[k] * (dx[j] - rz[k] / a - r.rp2[k]);
            dy2[k] = -u2;
            dz[k] = (rz[k] + u2) / a;
            ds[k] = (r.rc[k] - it.s[k] * dz[k]) / it.z[k];
        }
        Step {
            dx,
            dz,
            dy: v.iter().map(|x| -x).collect(),
            dy2,
            ds,
        }
    }
}

/// `δI + A·diag(u)·Aᵀ` with `u = 1/(H_ii + ρ + w_i)`.
#[derive(Debug, Clone)]
pub struct ReducedSchur {
    pattern: NormalPattern,
    pub matrix: SymMatrix,
    pub u: Vec<f64>,
    delta: f64,
}

impl ReducedSchur {
    pub fn new(p: &Problem) -> Result<Self, NewtonError> {
        if !p.model.h.is_diagonal() {
            return Err(NewtonError::UnsupportedReduction);
        }
        let pattern = NormalPattern::new(&p.model.a);
        let matrix = pattern.pattern().clone();
        Ok(ReducedSchur {
            pattern,
            matrix,
            u: vec![0.0; p.model.d()],
            delta: p.reg.delta,
        })
    }

    /// Reassembles from the current Schur diagonal.
    pub fn update(&mut self, p: &Problem, sn: &SlackNewton) {
        self.u = sn.primal_diag(p).iter().map(|v| 1.0 / v).collect();
        self.pattern
            .assemble_into(&p.model.a, &self.u, &vec![self.delta; p.model.m()], &mut self.matrix)
            .expect("dimensions fixed at construction");
    }

    /// `A·diag(u)·r_x − r_y`.
    pub fn rhs(&self, a: &CscMatrix, rx: &[f64], ry: &[f64]) -> Vec<f64> {
        let ux: Vec<f64> = rx.iter().zip(&self.u).map(|(r, u)| r * u).collect();
        let mut out = a.matvec(&ux).expect("length d");
        for (o, r) in out.iter_mut().zip(ry) {
            *o -= r;
        }
        out
    }

    /// `Δx = diag(u)(r_x − Aᵀv)`.
    pub fn recover_dx(&self, a: &CscMatrix, rx: &[f64], v: &[f64]) -> Vec<f64> {
        let atv = a.tr_matvec(v).expect("length m");
        rx.iter().zip(&atv).zip(&self.u).map(|((r, t), u)| u * (r - t)).collect()
    }

    /// Applies `δI + A·diag(u)·Aᵀ` without forming it.
    pub fn apply(&self, a: &CscMatrix, v: &[f64], out: &mut [f64]) {
        let mut t = vec![0.0; a.ncols()];
        a.tr_gaxpy(1.0, v, &mut t);
        for (ti, ui) in t.iter_mut().zip(&self.u) {
            *ti *= ui;
        }
        for (o, vi) in out.iter_mut().zip(v) {
            *o = self.delta * vi;
        }
        a.gaxpy(1.0, &t, out);
    }
}

/// Applies the Jacobian of the regularized IPM map to a step. Solving the
/// Newton system means `jacobian_apply(step) == rhs`.
pub fn jacobian_apply(p: &Problem, it: &Iterate, st: &Step) -> NewtonRhs {
    let m = p.model;
    let (rho, delta) = (p.reg.rho, p.reg.delta);
    let mut rd = m.h.matvec(&st.dx).expect("length d");
    for (r, dx) in rd.iter_mut().zip(&st.dx) {
        *r += rho * dx;
    }
    m.a.tr_gaxpy(-1.0, &st.dy, &mut rd);
    let mut rp = m.a.matvec(&st.dx).expect("length d");
    for (r, dy) in rp.iter_mut().zip(&st.dy) {
        *r += delta * dy;
    }
    match p.form {
        Formulation::Standard => {
            for (k, &j) in p.cone.iter().enumerate() {
                rd[j] -= st.ds[k];
            }
            let rc = p
                .cone
                .iter()
                .enumerate()
                .map(|(k, &j)| it.s[k] * st.dx[j] + it.x[j] * st.ds[k])
                .collect();
            NewtonRhs {
                rd,
                rz: Vec::new(),
                rp,
                rp2: Vec::new(),
                rc,
            }
        }
        Formulation::Slack => {
            let nc = p.cone.len();
            let mut rz = vec![0.0; nc];
            let mut rp2 = vec![0.0; nc];
            let mut rc = vec![0.0; nc];
            for (k, &j) in p.cone.iter().enumerate() {
                rd[j] -= st.dy2[k];
                rz[k] = rho * st.dz[k] + st.dy2[k] - st.ds[k];
                rp2[k] = st.dx[j] - st.dz[k] + delta * st.dy2[k];
                rc[k] = it.s[k] * st.dz[k] + it.z[k] * st.ds[k];
            }
            NewtonRhs { rd, rz, rp, rp2, rc }
        }
    }
}

/// Result of the dense eigenvalue check of `S(Θ)⁻¹S(Θ̂)`.
#[derive(Debug, Clone)]
pub struct SpectralCheck {
    /// Real parts, sorted.
    pub eigenvalues: Vec<f64>,
    /// Largest relative residual `‖M u − η u‖` of the lifted eigenpairs.
    pub max_pair_residual: f64,
    pub unit_count: usize,
    /// Interval `(1 + min λ(D_A)/max λ(H_A), 1 + max λ(D_A)/min λ(H_A))`.
    pub interval: (f64, f64),
    /// Interval that is valid for any sign pattern of `D_A`.
    pub sign_aware_interval: (f64, f64),
    /// Eigenvalues other than the unit ones that fall outside `interval`.
    pub outside: Vec<f64>,
    pub outside_sign_aware: Vec<f64>,
}

pub const SPECTRAL_MAX_DIM: usize = 80;

/// Dense check of the eigenvalues of `S(Θ)⁻¹S(Θ̂)` for small instances where
/// every variable is sign constrained. `h` is dense symmetric `d×d`, `a` is `m×d`.
pub fn spectral_interval_check(
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    theta_inv: &[f64],
    theta_hat_inv: &[f64],
    reg: RegParams,
) -> Result<SpectralCheck, NewtonError> {
    let d = h.nrows();
    let m = a.nrows();
    if d + m > SPECTRAL_MAX_DIM {
        return Err(NewtonError::TooLarge(d + m));
    }
    let (rho, delta) = (reg.rho, reg.delta);
    let w_old = schur_diag(theta_inv, rho, delta);
    let w_new = schur_diag(theta_hat_inv, rho, delta);
    let build = |w: &[f64]| {
        let mut s = DMatrix::<f64>::zeros(d + m, d + m);
        for i in 0..d {
            for j in 0..d {
                s[(i, j)] = h[(i, j)];
            }
            s[(i, i)] += rho + w[i];
        }
        for i in 0..m {
            for j in 0..d {
                s[(d + i, j)] = a[(i, j)];
                s[(j, d + i)] = a[(i, j)];
            }
            s[(d + i, d + i)] = -delta;
        }
        s
    };
    let s_old = build(&w_old);
    let s_new = build(&w_new);
    let inv = s_old.try_inverse().ok_or(NewtonError::Singular)?;
    let mmat = &inv * &s_new;
    let da: Vec<f64> = (0..d).map(|i| d_a_entry(theta_hat_inv[i], theta_inv[i], rho, delta)).collect();

    // M = I + S(Θ)⁻¹ diag(D_A, 0), and the second term is block lower
    // triangular: its spectrum is m zeros plus eig(X D_A) with X the leading
    // d×d block of S(Θ)⁻¹. X is SPD, so eig(X D_A) = eig(Lᵀ D_A L) for X = L Lᵀ.
    let x = inv.view((0, 0), (d, d)).into_owned();
    let x = (&x + x.transpose()) * 0.5;
    let l = x.cholesky().ok_or(NewtonError::Singular)?.l();
    let dmat = DMatrix::from_diagonal(&DVector::from_column_slice(&da));
    let se = (l.transpose() * &dmat * &l).symmetric_eigen();
    let mnorm = mmat.norm();
    let mut max_pair_residual = 0.0f64;
    let mut eig = vec![1.0; m];
    for k in 0..d {
        let lam = se.eigenvalues[k];
        eig.push(1.0 + lam);
        if lam.abs() <= 1e-12 {
            continue;
        }
        // Lift the eigenvector to the full matrix and measure ‖M u − η u‖.
        let v = &l * se.eigenvectors.column(k);
        let tail = inv.view((d, 0), (m, d)) * (&dmat * &v) / lam;
        let u = DVector::from_iterator(d + m, v.iter().copied().chain(tail.iter().copied()));
        let res = (&mmat * &u - &u * (1.0 + lam)).norm() / (u.norm() * mnorm.max(1.0));
        max_pair_residual = max_pair_residual.max(res);
    }
    eig.sort_by(f64::total_cmp);

    // H_A is the primal Schur complement of S(Θ).
    let mut ha = h + a.transpose() * a / delta;
    for i in 0..d {
        ha[(i, i)] += rho + w_old[i];
    }
    let hev = ha.symmetric_eigenvalues();
    let hmin = hev.min();
    let hmax = hev.max();
    let dmin = da.iter().copied().fold(f64::INFINITY, f64::min);
    let dmax = da.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let interval = (1.0 + dmin / hmax, 1.0 + dmax / hmin);
    let lo = if dmin >= 0.0 { dmin / hmax } else { dmin / hmin };
    let hi = if dmax >= 0.0 { dmax / hmin } else { dmax / hmax };
    let sign_aware_interval = (1.0 + lo, 1.0 + hi);

    // Remove m eigenvalues closest to 1 (the guaranteed unit block) before
    // testing the interval on the rest.
    let unit_count = eig.iter().filter(|&&e| (e - 1.0).abs() <= 1e-8).count();
    let mut by_dist: Vec<f64> = eig.clone();
    by_dist.sort_by(|x, y| (x - 1.0).abs().total_cmp(&(y - 1.0).abs()));
    let rest = &by_dist[m.min(by_dist.len())..];
    let slack = |b: f64| 1e-9 * b.abs().max(1.0);
    let outside_of = |(lo, hi): (f64, f64)| -> Vec<f64> {
        rest.iter()
            .copied()
            .filter(|&e| !(e > lo - slack(lo) && e < hi + slack(hi)))
            .collect()
    };
    Ok(SpectralCheck {
        outside: outside_of(interval),
        outside_sign_aware: outside_of(sign_aware_interval),
        eigenvalues: eig,
        max_pair_residual,
        unit_count,
        interval,
        sign_aware_interval,
    })
}

/// Largest eigenvalue magnitude of a dense symmetric matrix.
pub fn dense_sym_norm2(mat: &DMatrix<f64>) -> f64 {
    mat.clone().symmetric_eigenvalues().iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

/// Dense vector helper for oracles.
pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
