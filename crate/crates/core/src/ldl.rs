//! Sparse LDLᵀ for quasi-definite and positive definite matrices.
//!
//! Pivots are static: the diagonal of `D` carries the expected sign of each
//! row, so no 2×2 blocks or dynamic pivoting are needed. The fill-reducing
//! ordering and elimination tree depend only on the pattern and are kept in a
//! [`Symbolic`] that can be shared across refactorizations.

use std::sync::Arc;

use thiserror::Error;

use crate::sparse::{norm_inf, DiagMat, SymMatrix};

const NONE: usize = usize::MAX;

/// Residual level above which a factorization is declared unstable.
pub const INSTABILITY_TOL: f64 = 1e-6;
/// Target residual level for refined solves.
pub const SOLVE_TOL: f64 = 1e-8;
/// Maximum number of times the pivot threshold is multiplied by 10.
pub const MAX_ESCALATIONS: u32 = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdlError {
    #[error("numerical instability: verification residual {residual:.3e} with pivot threshold {threshold:.3e}")]
    InstabilityDetected { residual: f64, threshold: f64 },
    #[error("non-positive pivot {value:.3e} at position {index}")]
    NonPositivePivot { index: usize, value: f64 },
    #[error("non-finite value in matrix or factor")]
    NotFinite,
    #[error("fill-reducing ordering failed: {0}")]
    Ordering(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Ordering, elimination tree and factor layout for one sparsity pattern.
#[derive(Debug)]
pub struct Symbolic {
    n: usize,
    perm: Vec<usize>,
    perm_inv: Vec<usize>,
    parent: Vec<usize>,
    l_col_ptr: Vec<usize>,
    // Upper triangle of the permuted matrix, by columns, with the source slot
    // in the caller's lower-triangular storage.
    c_col_ptr: Vec<usize>,
    c_row_idx: Vec<usize>,
    c_src: Vec<usize>,
    src_col_ptr: Vec<usize>,
    src_row_idx: Vec<usize>,
}

impl Symbolic {
    pub fn analyze(k: &SymMatrix) -> Result<Self, LdlError> {
        let lower = k.lower();
        let n = k.n();
        let (perm, perm_inv) = if n == 0 {
            (Vec::new(), Vec::new())
        } else {
            let (p, pinv, _) = amd::order::<usize>(n, lower.col_ptr(), lower.row_idx(), &amd::Control::default())
                .map_err(|s| LdlError::Ordering(format!("{s:?}")))?;
            (p, pinv)
        };

        let mut counts = vec![0usize; n + 1];
        for (i, j, _) in lower.triplets() {
            let (pi, pj) = (perm_inv[i], perm_inv[j]);
            counts[pi.max(pj) + 1] += 1;
        }
        for c in 0..n {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let nnz = lower.nnz();
        let mut c_row_idx = vec![0; nnz];
        let mut c_src = vec![0; nnz];
        for (q, (i, j, _)) in lower.triplets().enumerate() {
            let (pi, pj) = (perm_inv[i], perm_inv[j]);
            let col = pi.max(pj);
            c_row_idx[next[col]] = pi.min(pj);
            c_src[next[col]] = q;
            next[col] += 1;
        }

        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        for kk in 0..n {
            flag[kk] = kk;
            for p in counts[kk]..counts[kk + 1] {
                let mut i = c_row_idx[p];
                while i < kk && flag[i] != kk {
                    if parent[i] == NONE {
                        parent[i] = kk;
                    }
                    lnz[i] += 1;
                    flag[i] = kk;
                    i = parent[i];
                }
            }
        }
        let mut l_col_ptr = vec![0usize; n + 1];
        for c in 0..n {
            l_col_ptr[c + 1] = l_col_ptr[c] + lnz[c];
        }

        Ok(Symbolic {
            n,
            perm,
            perm_inv,
            parent,
            l_col_ptr,
            c_col_ptr: counts,
            c_row_idx,
            c_src,
            src_col_ptr: lower.col_ptr().to_vec(),
            src_row_idx: lower.row_idx().to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }
    pub fn perm_inv(&self) -> &[usize] {
        &self.perm_inv
    }
    /// Number of strictly-lower entries in `L`.
    pub fn l_nnz(&self) -> usize {
        self.l_col_ptr[self.n]
    }

    pub fn matches(&self, k: &SymMatrix) -> bool {
        k.lower().col_ptr() == self.src_col_ptr.as_slice() && k.lower().row_idx() == self.src_row_idx.as_slice()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    /// Quasi-definite: the first `positive` rows carry positive pivots, the rest negative.
    QuasiDefinite { positive: usize },
    /// Positive definite, stored in LDLᵀ form.
    Cholesky,
}

/// A numeric factorization `P K Pᵀ = L D Lᵀ` together with the matrix it came from.
#[derive(Debug, Clone)]
pub struct FactorHandle {
    symbolic: Arc<Symbolic>,
    l_row_idx: Vec<usize>,
    l_values: Vec<f64>,
    d: Vec<f64>,
    matrix: SymMatrix,
    kind: FactorKind,
    pivot_threshold: f64,
    perturbed: usize,
    theta: Option<DiagMat>,
    built_at: usize,
}

fn resolve_symbolic(k: &SymMatrix, symbolic: Option<&Arc<Symbolic>>) -> Result<Arc<Symbolic>, LdlError> {
    match symbolic {
        Some(s) if s.matches(k) => Ok(Arc::clone(s)),
        _ => Ok(Arc::new(Symbolic::analyze(k)?)),
    }
}

/// Factorizes a quasi-definite matrix whose first `positive` rows form the
/// positive definite block. Pivots that come out on the wrong side of
/// `±pivot_threshold` are replaced by `±pivot_threshold`; the factorization is
/// then checked by a verification solve.
pub fn factorize_qdef(
    k: &SymMatrix,
    positive: usize,
    pivot_threshold: f64,
    symbolic: Option<&Arc<Symbolic>>,
) -> Result<FactorHandle, LdlError> {
    if positive > k.n() {
        return Err(LdlError::DimensionMismatch {
            expected: k.n(),
            got: positive,
        });
    }
    let sym = resolve_symbolic(k, symbolic)?;
    let h = numeric(sym, k, FactorKind::QuasiDefinite { positive }, pivot_threshold)?;
    h.verify()?;
    Ok(h)
}

/// Like [`factorize_qdef`], multiplying the threshold by 10 after each detected
/// instability. Returns the handle and the number of escalations used.
pub fn factorize_qdef_escalating(
    k: &SymMatrix,
    positive: usize,
    pivot_threshold: f64,
    symbolic: Option<&Arc<Symbolic>>,
) -> Result<(FactorHandle, u32), LdlError> {
    let sym = resolve_symbolic(k, symbolic)?;
    let mut threshold = pivot_threshold;
    let mut escalations = 0;
    loop {
        match factorize_qdef(k, positive, threshold, Some(&sym)) {
            Ok(h) => return Ok((h, escalations)),
            Err(LdlError::InstabilityDetected { .. }) if escalations < MAX_ESCALATIONS => {
                log::debug!("LDL instability at threshold {threshold:.2e}, escalating");
                threshold *= 10.0;
                escalations += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Factorizes a symmetric positive definite matrix.
pub fn factorize_spd(k: &SymMatrix, symbolic: Option<&Arc<Symbolic>>) -> Result<FactorHandle, LdlError> {
    let sym = resolve_symbolic(k, symbolic)?;
    numeric(sym, k, FactorKind::Cholesky, 0.0)
}

fn numeric(sym: Arc<Symbolic>, k: &SymMatrix, kind: FactorKind, threshold: f64) -> Result<FactorHandle, LdlError> {
    let n = sym.n;
    let kv = k.lower().values();
    if kv.iter().any(|v| !v.is_finite()) {
        return Err(LdlError::NotFinite);
    }
    let lp = &sym.l_col_ptr;
    let mut li = vec![0usize; sym.l_nnz()];
    let mut lx = vec![0.0; sym.l_nnz()];
    let mut d = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut pattern = vec![0usize; n];
    let mut flag = vec![NONE; n];
    let mut lnz = vec![0usize; n];
    let mut perturbed = 0;

    for kk in 0..n {
        let mut top = n;
        flag[kk] = kk;
        for p in sym.c_col_ptr[kk]..sym.c_col_ptr[kk + 1] {
            let mut i = sym.c_row_idx[p];
            y[i] += kv[sym.c_src[p]];
            let mut len = 0;
            while flag[i] != kk {
                pattern[len] = i;
                len += 1;
                flag[i] = kk;
                i = sym.parent[i];
            }
            while len > 0 {
                top -= 1;
                len -= 1;
                pattern[top] = pattern[len];
            }
        }
        let mut dk = y[kk];
        y[kk] = 0.0;
        while top < n {
            let i = pattern[top];
            let yi = y[i];
            y[i] = 0.0;
            let end = lp[i] + lnz[i];
            for p in lp[i]..end {
                y[li[p]] -= lx[p] * yi;
            }
            let l_ki = yi / d[i];
            dk -= l_ki * yi;
            li[end] = kk;
            lx[end] = l_ki;
            lnz[i] += 1;
            top += 1;
        }
        match kind {
            FactorKind::Cholesky => {
                if !(dk > 0.0) {
                    return Err(LdlError::NonPositivePivot {
                        index: sym.perm[kk],
                        value: dk,
                    });
                }
            }
            FactorKind::QuasiDefinite { positive } => {
                let sign = if sym.perm[kk] < positive { 1.0 } else { -1.0 };
                if !dk.is_finite() {
                    return Err(LdlError::NotFinite);
                }
                if sign * dk < threshold {
                    dk = sign * threshold;
                    perturbed += 1;
                }
            }
        }
        d[kk] = dk;
    }
    if perturbed > 0 {
        log::trace!("LDL replaced {perturbed} pivots at threshold {threshold:.2e}");
    }
    Ok(FactorHandle {
        symbolic: sym,
        l_row_idx: li,
        l_values: lx,
        d,
        matrix: k.clone(),
        kind,
        pivot_threshold: threshold,
        perturbed,
        theta: None,
        built_at: 0,
    })
}

impl FactorHandle {
    pub fn n(&self) -> usize {
        self.symbolic.n
    }
    pub fn symbolic(&self) -> &Arc<Symbolic> {
        &self.symbolic
    }
    pub fn kind(&self) -> FactorKind {
        self.kind
    }
    /// Diagonal of `D` in pivot order.
    pub fn d(&self) -> &[f64] {
        &self.d
    }
    pub fn perm(&self) -> &[usize] {
        &self.symbolic.perm
    }
    pub fn pivot_threshold(&self) -> f64 {
        self.pivot_threshold
    }
    /// Number of pivots replaced by the threshold value.
    pub fn perturbed_pivots(&self) -> usize {
        self.perturbed
    }
    pub fn matrix(&self) -> &SymMatrix {
        &self.matrix
    }
    pub fn theta(&self) -> Option<&DiagMat> {
        self.theta.as_ref()
    }
    pub fn built_at(&self) -> usize {
        self.built_at
    }

    /// Records the scaling the factored matrix was assembled from.
    pub fn with_snapshot(mut self, theta: DiagMat, ipm_iteration: usize) -> Self {
        self.theta = Some(theta);
        self.built_at = ipm_iteration;
        self
    }

    /// (#positive, #negative) entries of `D`.
    pub fn inertia(&self) -> (usize, usize) {
        let pos = self.d.iter().filter(|&&v| v > 0.0).count();
        (pos, self.d.len() - pos)
    }

    /// Dense row-major unit lower factor in pivot order.
    pub fn l_dense(&self) -> Vec<f64> {
        let n = self.n();
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            l[j * n + j] = 1.0;
            for p in self.symbolic.l_col_ptr[j]..self.symbolic.l_col_ptr[j + 1] {
                l[self.l_row_idx[p] * n + j] = self.l_values[p];
            }
        }
        l
    }

    /// Applies the factor inverse once, without refinement.
    pub fn solve_raw_in_place(&self, x: &mut [f64], work: &mut Vec<f64>) {
        let n = self.n();
        assert_eq!(x.len(), n);
        let perm = &self.symbolic.perm;
        let lp = &self.symbolic.l_col_ptr;
        work.clear();
        work.extend(perm.iter().map(|&p| x[p]));
        let w = work.as_mut_slice();
        for j in 0..n {
            let wj = w[j];
            if wj != 0.0 {
                for p in lp[j]..lp[j + 1] {
                    w[self.l_row_idx[p]] -= self.l_values[p] * wj;
                }
            }
        }
        for j in 0..n {
            w[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut acc = w[j];
            for p in lp[j]..lp[j + 1] {
                acc -= self.l_values[p] * w[self.l_row_idx[p]];
            }
            w[j] = acc;
        }
        for (k, &p) in perm.iter().enumerate() {
            x[p] = w[k];
        }
    }

    pub fn solve_raw(&self, rhs: &[f64]) -> Result<Vec<f64>, LdlError> {
        self.check_dim(rhs.len())?;
        let mut x = rhs.to_vec();
        self.solve_raw_in_place(&mut x, &mut Vec::with_capacity(rhs.len()));
        Ok(x)
    }

    /// Solves `K x = rhs` with up to two steps of iterative refinement against
    /// the stored matrix. Returns the solution and the final residual ∞-norm.
    pub fn solve_with_residual(&self, rhs: &[f64]) -> Result<(Vec<f64>, f64), LdlError> {
        self.check_dim(rhs.len())?;
        let mut work = Vec::with_capacity(rhs.len());
        let mut x = rhs.to_vec();
        self.solve_raw_in_place(&mut x, &mut work);
        let target = SOLVE_TOL * (1.0 + norm_inf(rhs));
        let mut r = self.residual(&x, rhs);
        let mut rn = norm_inf(&r);
        for _ in 0..2 {
            if !(rn > target) {
                break;
            }
            self.solve_raw_in_place(&mut r, &mut work);
            let cand: Vec<f64> = x.iter().zip(&r).map(|(a, b)| a + b).collect();
            let rc = self.residual(&cand, rhs);
            let rcn = norm_inf(&rc);
            if !(rcn < rn) {
                break;
            }
            x = cand;
            r = rc;
            rn = rcn;
        }
        Ok((x, rn))
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LdlError> {
        Ok(self.solve_with_residual(rhs)?.0)
    }

    fn residual(&self, x: &[f64], rhs: &[f64]) -> Vec<f64> {
        let mut r = rhs.to_vec();
        self.matrix.gaxpy(-1.0, x, &mut r);
        r
    }

    fn check_dim(&self, got: usize) -> Result<(), LdlError> {
        if got == self.n() {
            Ok(())
        } else {
            Err(LdlError::DimensionMismatch {
                expected: self.n(),
                got,
            })
        }
    }

    fn verify(&self) -> Result<(), LdlError> {
        let n = self.n();
        if self.d.iter().any(|v| !v.is_finite()) || self.l_values.iter().any(|v| !v.is_finite()) {
            return Err(LdlError::InstabilityDetected {
                residual: f64::INFINITY,
                threshold: self.pivot_threshold,
            });
        }
        let rhs = self.matrix.matvec(&vec![1.0; n]).expect("square matrix");
        let (_, res) = self.solve_with_residual(&rhs)?;
        if !(res <= INSTABILITY_TOL * (1.0 + norm_inf(&rhs))) {
            return Err(LdlError::InstabilityDetected {
                residual: res,
                threshold: self.pivot_threshold,
            });
        }
        Ok(())
    }
}
