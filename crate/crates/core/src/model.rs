//! Standard-form convex QP `min ½xᵀHx + gᵀx  s.t. Ax = b, x_C ≥ 0, x_F free`.

use std::path::Path;

use thiserror::Error;

use crate::mps::{self, MpsError, MpsProblem};
use crate::sparse::{dot, CscMatrix, SparseError, SymMatrix};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Mps(#[from] MpsError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
    #[error("H is not symmetric at ({0}, {1})")]
    NonSymmetric(usize, usize),
    #[error("column `{0}` has lower bound above upper bound")]
    InfeasibleBounds(String),
    #[error("A and H are both zero; the regularization is undefined")]
    ZeroNorm,
    #[error("regularization scale must be a finite number >= 1, got {0}")]
    InvalidScale(f64),
}

/// Maps a standard-form point back to the variables of the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub names: Vec<String>,
    /// `x_orig[j] = shift[j] + sign[j] * x[j]` for the first `names.len()` columns.
    pub shift: Vec<f64>,
    pub sign: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct QpModel {
    pub name: String,
    /// Full symmetric storage (both triangles).
    pub h: CscMatrix,
    pub a: CscMatrix,
    pub g: Vec<f64>,
    pub b: Vec<f64>,
    /// `true` for variables constrained to be nonnegative.
    pub cone: Vec<bool>,
    /// Constant added to the objective.
    pub obj_offset: f64,
    /// -1 when the source problem was a maximization.
    pub obj_sign: f64,
    pub recovery: Option<Recovery>,
}

impl QpModel {
    pub fn new(h: CscMatrix, a: CscMatrix, g: Vec<f64>, b: Vec<f64>, cone: Vec<bool>) -> Result<Self, ModelError> {
        let d = g.len();
        let m = b.len();
        if h.nrows() != d || h.ncols() != d {
            return Err(ModelError::Dimension(format!("H is {}x{}, expected {d}x{d}", h.nrows(), h.ncols())));
        }
        if a.nrows() != m || a.ncols() != d {
            return Err(ModelError::Dimension(format!("A is {}x{}, expected {m}x{d}", a.nrows(), a.ncols())));
        }
        if cone.len() != d {
            return Err(ModelError::Dimension(format!("cone mask has {} entries, expected {d}", cone.len())));
        }
        for (i, j, v) in h.triplets() {
            let t = h.get(j, i);
            if (v - t).abs() > 1e-12 * v.abs().max(t.abs()).max(1.0) {
                return Err(ModelError::NonSymmetric(i, j));
            }
        }
        if m > d {
            log::warn!("model has more rows ({m}) than columns ({d})");
        }
        Ok(QpModel {
            name: String::new(),
            h,
            a,
            g,
            b,
            cone,
            obj_offset: 0.0,
            obj_sign: 1.0,
            recovery: None,
        })
    }

    /// Linear program with every variable nonnegative.
    pub fn lp(a: CscMatrix, g: Vec<f64>, b: Vec<f64>) -> Result<Self, ModelError> {
        let d = g.len();
        Self::new(CscMatrix::zeros(d, d), a, g, b, vec![true; d])
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn d(&self) -> usize {
        self.g.len()
    }
    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn cone_indices(&self) -> Vec<usize> {
        (0..self.d()).filter(|&j| self.cone[j]).collect()
    }
    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.d()).filter(|&j| !self.cone[j]).collect()
    }

    pub fn h_lower(&self) -> SymMatrix {
        SymMatrix::from_full(&self.h).expect("square H")
    }

    /// `½xᵀHx + gᵀx` without offset or sense.
    pub fn raw_objective(&self, x: &[f64]) -> f64 {
        let hx = self.h.matvec(x).expect("length d");
        0.5 * dot(x, &hx) + dot(&self.g, x)
    }

    /// Objective in the coordinates and sense of the source problem.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.obj_sign * (self.raw_objective(x) + self.obj_offset)
    }

    /// Values of the source problem's variables.
    pub fn original_primal(&self, x: &[f64]) -> Vec<f64> {
        match &self.recovery {
            Some(r) => (0..r.names.len()).map(|j| r.shift[j] + r.sign[j] * x[j]).collect(),
            None => x.to_vec(),
        }
    }

    pub fn from_mps(p: &MpsProblem) -> Result<Self, ModelError> {
        standard_form(p)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let p = mps::read_mps(path)?;
        Self::from_mps(&p)
    }
}

fn standard_form(p: &MpsProblem) -> Result<QpModel, ModelError> {
    let n = p.ncols();
    let sense = if p.maximize { -1.0 } else { 1.0 };

    let mut shift = vec![0.0; n];
    let mut sign = vec![1.0; n];
    let mut cone = Vec::with_capacity(n);
    // (column, width) for columns that need an extra row.
    let mut bounded: Vec<(usize, f64)> = Vec::new();
    let mut fixed: Vec<usize> = Vec::new();
    for j in 0..n {
        let (l, u) = (p.lower[j], p.upper[j]);
        if l > u {
            return Err(ModelError::InfeasibleBounds(p.col_names[j].clone()));
        }
        match (l.is_finite(), u.is_finite()) {
            (false, false) => cone.push(false),
            (true, false) => {
                shift[j] = l;
                cone.push(true);
            }
            (false, true) => {
                shift[j] = u;
                sign[j] = -1.0;
                cone.push(true);
            }
            (true, true) if l == u => {
                shift[j] = l;
                cone.push(false);
                fixed.push(j);
            }
            (true, true) => {
                shift[j] = l;
                cone.push(true);
                bounded.push((j, u - l));
            }
        }
    }

    let q = CscMatrix::from_triplets(
        n,
        n,
        &p.q_lower
            .iter()
            .flat_map(|&(i, j, v)| {
                let mirror = (i != j).then_some((j, i, v));
                std::iter::once((i, j, v)).chain(mirror)
            })
            .collect::<Vec<_>>(),
    )?;
    let qt = q.matvec(&shift)?;
    let g0: Vec<f64> = (0..n).map(|j| sense * sign[j] * (p.c[j] + qt[j])).collect();
    let offset = sense * (p.obj_constant + dot(&p.c, &shift) + 0.5 * dot(&shift, &qt));
    let at = p.a.matvec(&shift)?;

    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(p.a.nnz() + 2 * p.nrows());
    let mut b = Vec::new();
    let mut row_of = vec![usize::MAX; p.nrows()];
    for i in 0..p.nrows() {
        let (lo, hi) = p.row_bounds(i);
        if lo.is_infinite() && hi.is_infinite() {
            continue;
        }
        row_of[i] = b.len();
        b.push(0.0);
    }
    for (i, j, v) in p.a.triplets() {
        if row_of[i] != usize::MAX {
            triplets.push((row_of[i], j, v * sign[j]));
        }
    }
    let mut ncol = n;
    let mut extra_rows: Vec<(usize, f64)> = Vec::new();
    for i in 0..p.nrows() {
        let r = row_of[i];
        if r == usize::MAX {
            continue;
        }
        let (lo, hi) = p.row_bounds(i);
        let (lo, hi) = (lo - at[i], hi - at[i]);
        if lo == hi {
            b[r] = lo;
        } else if lo.is_infinite() {
            triplets.push((r, ncol, 1.0));
            cone.push(true);
            ncol += 1;
            b[r] = hi;
        } else {
            triplets.push((r, ncol, -1.0));
            cone.push(true);
            if hi.is_finite() {
                extra_rows.push((ncol, hi - lo));
            }
            ncol += 1;
            b[r] = lo;
        }
    }
    for &j in &fixed {
        let r = b.len();
        triplets.push((r, j, 1.0));
        b.push(0.0);
    }
    for &(j, width) in bounded.iter().chain(&extra_rows) {
        let r = b.len();
        triplets.push((r, j, 1.0));
        triplets.push((r, ncol, 1.0));
        cone.push(true);
        ncol += 1;
        b.push(width);
    }

    let m = b.len();
    let a = CscMatrix::from_triplets(m, ncol, &triplets)?;
    let h_trip: Vec<_> = q
        .triplets()
        .map(|(i, j, v)| (i, j, sense * sign[i] * sign[j] * v))
        .collect();
    let h = CscMatrix::from_triplets(ncol, ncol, &h_trip)?;
    let mut g = g0;
    g.resize(ncol, 0.0);
    let mut model = QpModel::new(h, a, g, b, cone)?;
    model.name = p.name.clone();
    model.obj_offset = offset;
    model.obj_sign = sense;
    model.recovery = Some(Recovery {
        names: p.col_names.clone(),
        shift,
        sign,
    });
    Ok(model)
}

/// The replicated-variable form: `x_C − z = 0` moves every sign constraint onto `z`.
/// Free variables are not replicated.
#[derive(Debug, Clone)]
pub struct SlackModel {
    pub base: QpModel,
    pub cone_idx: Vec<usize>,
}

impl SlackModel {
    pub fn new(base: QpModel) -> Self {
        let cone_idx = base.cone_indices();
        SlackModel { base, cone_idx }
    }

    pub fn z_dim(&self) -> usize {
        self.cone_idx.len()
    }

    /// Sizes of (x, z, y₁, y₂).
    pub fn block_sizes(&self) -> (usize, usize, usize, usize) {
        (self.base.d(), self.z_dim(), self.base.m(), self.z_dim())
    }

    /// The objective does not involve `z`.
    pub fn objective(&self, x: &[f64], _z: &[f64]) -> f64 {
        self.base.objective(x)
    }

    /// Stacked constraint residual `(Ax − b, x_C − z)`.
    pub fn constraint_residual(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let mut r = self.base.a.matvec(x).expect("length d");
        for (ri, bi) in r.iter_mut().zip(&self.base.b) {
            *ri -= bi;
        }
        r.extend(self.cone_idx.iter().zip(z).map(|(&j, zj)| x[j] - zj));
        r
    }
}

pub fn to_slack(model: &QpModel) -> SlackModel {
    SlackModel::new(model.clone())
}

/// Primal and dual regularization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegParams {
    pub rho: f64,
    pub delta: f64,
    pub scale: f64,
}

impl RegParams {
    pub fn new(rho: f64, delta: f64) -> Self {
        RegParams { rho, delta, scale: 1.0 }
    }
}

pub const REG_FLOOR: f64 = 1e-10;

/// `ρ = δ = f · max(1 / max(‖A‖∞, ‖H‖∞), 1e-10)`.
pub fn compute_reg(model: &QpModel, f: f64) -> Result<RegParams, ModelError> {
    if !(f.is_finite() && f >= 1.0) {
        return Err(ModelError::InvalidScale(f));
    }
    let norm = model.a.inf_norm().max(model.h.inf_norm());
    if norm == 0.0 {
        return Err(ModelError::ZeroNorm);
    }
    let rho = f * (1.0 / norm).max(REG_FLOOR);
    Ok(RegParams {
        rho,
        delta: rho,
        scale: f,
    })
}
