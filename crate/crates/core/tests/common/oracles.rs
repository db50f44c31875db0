//! Dense oracles for the sparse factorization and the Krylov solvers.

use nalgebra::{DMatrix, DVector};
use psipm::krylov::{gmres, pcg, KrylovConfig};
use psipm::ldl::{factorize_qdef, factorize_spd};
use psipm::sparse::SymMatrix;
use rand::Rng;

use super::{norm2, rng};

#[derive(Debug, Default)]
pub struct Tally {
    pub cases: usize,
    pub failures: Vec<String>,
}

impl Tally {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }
}

/// Random quasi-definite `[[E, Bᵀ], [B, −F]]` with sparse SPD `E` and `F`.
pub fn quasi_definite(r: &mut impl Rng, n1: usize, n2: usize) -> (SymMatrix, DMatrix<f64>) {
    let n = n1 + n2;
    let mut k = DMatrix::<f64>::zeros(n, n);
    let spd_block = |r: &mut dyn rand::RngCore, k: &mut DMatrix<f64>, off: usize, size: usize, sign: f64| {
        for i in 0..size {
            for j in 0..i {
                if r.gen_bool(0.3) {
                    let v = r.gen_range(-1.0..1.0);
                    k[(off + i, off + j)] = sign * v;
                    k[(off + j, off + i)] = sign * v;
                }
            }
        }
        for i in 0..size {
            let row: f64 = (0..size).filter(|&j| j != i).map(|j| k[(off + i, off + j)].abs()).sum();
            k[(off + i, off + i)] = sign * (row + r.gen_range(1e-3..2.0));
        }
    };
    spd_block(r, &mut k, 0, n1, 1.0);
    spd_block(r, &mut k, n1, n2, -1.0);
    for i in 0..n2 {
        for j in 0..n1 {
            if r.gen_bool(0.4) {
                let v = r.gen_range(-3.0..3.0);
                k[(n1 + i, j)] = v;
                k[(j, n1 + i)] = v;
            }
        }
    }
    (dense_to_sym(&k), k)
}

pub fn dense_to_sym(k: &DMatrix<f64>) -> SymMatrix {
    let n = k.nrows();
    let mut t = Vec::new();
    for j in 0..n {
        for i in j..n {
            if k[(i, j)] != 0.0 {
                t.push((i, j, k[(i, j)]));
            }
        }
    }
    SymMatrix::from_triplets(n, &t).expect("indices in range")
}

/// Inertia equals the block sizes, the factors reproduce `P K Pᵀ`, and the
/// refined solve has relative residual at most 1e-8.
pub fn ldl_suite(seed: u64, cases: usize) -> Tally {
    let mut r = rng(seed);
    let mut t = Tally::default();
    for c in 0..cases {
        let n1 = r.gen_range(1..25);
        let n2 = r.gen_range(0..15);
        let (k, dense) = quasi_definite(&mut r, n1, n2);
        t.cases += 1;
        let h = match factorize_qdef(&k, n1, 1e-14, None) {
            Ok(h) => h,
            Err(e) => {
                t.failures.push(format!("case {c}: factorization failed: {e}"));
                continue;
            }
        };
        t.check(h.inertia() == (n1, n2), || format!("case {c}: inertia {:?} != ({n1}, {n2})", h.inertia()));

        let n = n1 + n2;
        let l = DMatrix::from_row_slice(n, n, &h.l_dense());
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(h.d()));
        let perm = h.perm();
        let pk = DMatrix::from_fn(n, n, |i, j| dense[(perm[i], perm[j])]);
        let err = (&l * d * l.transpose() - &pk).amax();
        t.check(err <= 1e-10 * (1.0 + pk.amax()), || format!("case {c}: LDLᵀ reconstruction error {err:.2e}"));

        let rhs: Vec<f64> = (0..n).map(|_| r.gen_range(-10.0..10.0)).collect();
        let x = h.solve(&rhs).expect("matching dimension");
        let res = &dense * DVector::from_column_slice(&x) - DVector::from_column_slice(&rhs);
        let rel = res.norm() / norm2(&rhs);
        t.check(rel <= 1e-8, || format!("case {c}: solve residual {rel:.2e}"));

        // SPD branch on the positive block.
        let e = dense.view((0, 0), (n1, n1)).into_owned();
        let hs = factorize_spd(&dense_to_sym(&e), None);
        match hs {
            Ok(hs) => {
                t.check(hs.inertia() == (n1, 0), || format!("case {c}: SPD inertia {:?}", hs.inertia()));
                let rhs = &rhs[..n1];
                let x = hs.solve(rhs).expect("matching dimension");
                let res = &e * DVector::from_column_slice(&x) - DVector::from_column_slice(rhs);
                let rel = res.norm() / norm2(rhs);
                t.check(rel <= 1e-8, || format!("case {c}: SPD solve residual {rel:.2e}"));
            }
            Err(err) => t.failures.push(format!("case {c}: SPD factorization failed: {err}")),
        }
    }
    t
}

/// GMRES (restarted and full, with and without a Jacobi preconditioner) and
/// PCG agree with a dense LU solve for `n ≤ 30`.
pub fn krylov_suite(seed: u64, cases: usize) -> Tally {
    let mut r = rng(seed);
    let mut t = Tally::default();
    for c in 0..cases {
        let n = r.gen_range(1..=30);
        // Nonsymmetric, diagonally dominant.
        let m = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                n as f64 + r.gen_range(1.0..5.0)
            } else if r.gen_bool(0.5) {
                r.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        let rhs: Vec<f64> = (0..n).map(|_| r.gen_range(-5.0..5.0)).collect();
        let exact = m.clone().lu().solve(&DVector::from_column_slice(&rhs)).expect("nonsingular");
        let tol = 1e-12 * norm2(&rhs);
        let apply = |v: &[f64], out: &mut [f64]| {
            let w = &m * DVector::from_column_slice(v);
            out.copy_from_slice(w.as_slice());
        };
        let diag: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
        let jacobi = |v: &[f64], out: &mut [f64]| {
            for i in 0..v.len() {
                out[i] = v[i] / diag[i];
            }
        };
        let ident = |v: &[f64], out: &mut [f64]| out.copy_from_slice(v);
        let runs = [
            ("gmres(n)", gmres(apply, ident, &rhs, &KrylovConfig::gmres(n, 4 * n, tol))),
            ("gmres(5)", gmres(apply, jacobi, &rhs, &KrylovConfig::gmres(5, 40 * n, tol))),
        ];
        for (name, out) in runs {
            t.cases += 1;
            match out {
                Ok(o) => {
                    let err = (DVector::from_column_slice(&o.solution) - &exact).norm() / exact.norm().max(1e-300);
                    t.check(o.converged && err <= 1e-8, || {
                        format!("case {c} {name}: converged {} error {err:.2e}", o.converged)
                    });
                    t.check(o.residual_norm <= tol * 1.0001 || !o.converged, || {
                        format!("case {c} {name}: reported residual {:.2e} above tol", o.residual_norm)
                    });
                }
                Err(e) => t.failures.push(format!("case {c} {name}: {e}")),
            }
        }

        let spd = &m.transpose() * &m;
        let exact = spd.clone().cholesky().expect("SPD").solve(&DVector::from_column_slice(&rhs));
        let apply = |v: &[f64], out: &mut [f64]| {
            let w = &spd * DVector::from_column_slice(v);
            out.copy_from_slice(w.as_slice());
        };
        let diag: Vec<f64> = (0..n).map(|i| spd[(i, i)]).collect();
        let jacobi = |v: &[f64], out: &mut [f64]| {
            for i in 0..v.len() {
                out[i] = v[i] / diag[i];
            }
        };
        t.cases += 1;
        match pcg(apply, jacobi, &rhs, &KrylovConfig::pcg(10 * n, tol)) {
            Ok(o) => {
                let err = (DVector::from_column_slice(&o.solution) - &exact).norm() / exact.norm().max(1e-300);
                t.check(o.converged && err <= 1e-8, || format!("case {c} pcg: converged {} error {err:.2e}", o.converged));
            }
            Err(e) => t.failures.push(format!("case {c} pcg: {e}")),
        }
    }
    t
}
