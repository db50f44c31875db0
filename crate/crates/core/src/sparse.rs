//! Compressed-column sparse matrices and the few kernels the solver needs.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid column pointers")]
    BadColumnPointers,
    #[error("row indices in column {col} are not strictly increasing or out of range")]
    BadRowIndices { col: usize },
    #[error("index ({row}, {col}) outside a {nrows}x{ncols} matrix")]
    OutOfBounds {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
}

fn check_len(expected: usize, got: usize) -> Result<(), SparseError> {
    if expected == got {
        Ok(())
    } else {
        Err(SparseError::DimensionMismatch { expected, got })
    }
}

/// Sparse matrix in compressed-column form with sorted, unique row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    pub fn new(
        nrows: usize,
        ncols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, SparseError> {
        if col_ptr.len() != ncols + 1
            || col_ptr[0] != 0
            || col_ptr.windows(2).any(|w| w[0] > w[1])
            || col_ptr[ncols] != row_idx.len()
            || row_idx.len() != values.len()
        {
            return Err(SparseError::BadColumnPointers);
        }
        for j in 0..ncols {
            let rows = &row_idx[col_ptr[j]..col_ptr[j + 1]];
            if rows.windows(2).any(|w| w[0] >= w[1]) || rows.last().is_some_and(|&r| r >= nrows) {
                return Err(SparseError::BadRowIndices { col: j });
            }
        }
        Ok(CscMatrix {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// Builds a matrix from (row, col, value) triplets; coincident entries are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, SparseError> {
        let mut counts = vec![0usize; ncols + 1];
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(SparseError::OutOfBounds {
                    row: i,
                    col: j,
                    nrows,
                    ncols,
                });
            }
            counts[j + 1] += 1;
        }
        for j in 0..ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            rows[next[j]] = i;
            vals[next[j]] = v;
            next[j] += 1;
        }
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        col_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for j in 0..ncols {
            order.clear();
            order.extend(counts[j]..counts[j + 1]);
            order.sort_by_key(|&p| rows[p]);
            for &p in &order {
                if row_idx.len() > *col_ptr.last().unwrap() && *row_idx.last().unwrap() == rows[p] {
                    *values.last_mut().unwrap() += vals[p];
                } else {
                    row_idx.push(rows[p]);
                    values.push(vals[p]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Ok(CscMatrix {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CscMatrix {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        CscMatrix {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Row-major dense input, handy in tests. Exact zeros are not stored.
    pub fn from_dense(nrows: usize, ncols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), nrows * ncols);
        let mut t = Vec::new();
        for i in 0..nrows {
            for j in 0..ncols {
                let v = data[i * ncols + j];
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &t).expect("indices in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }
    pub fn ncols(&self) -> usize {
        self.ncols
    }
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }
    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }
    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (rows, vals) = self.col(j);
        match rows.binary_search(&i) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |j| {
            let (rows, vals) = self.col(j);
            rows.iter().zip(vals).map(move |(&i, &v)| (i, j, v))
        })
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>, SparseError> {
        check_len(self.ncols, v.len())?;
        let mut out = vec![0.0; self.nrows];
        self.gaxpy(1.0, v, &mut out);
        Ok(out)
    }

    pub fn tr_matvec(&self, v: &[f64]) -> Result<Vec<f64>, SparseError> {
        check_len(self.nrows, v.len())?;
        let mut out = vec![0.0; self.ncols];
        self.tr_gaxpy(1.0, v, &mut out);
        Ok(out)
    }

    /// `out += alpha * M v`. Panics on dimension mismatch.
    pub fn gaxpy(&self, alpha: f64, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.ncols);
        assert_eq!(out.len(), self.nrows);
        for j in 0..self.ncols {
            let vj = alpha * v[j];
            if vj == 0.0 {
                continue;
            }
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                out[self.row_idx[p]] += self.values[p] * vj;
            }
        }
    }

    /// `out += alpha * Mᵀ v`. Panics on dimension mismatch.
    pub fn tr_gaxpy(&self, alpha: f64, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.nrows);
        assert_eq!(out.len(), self.ncols);
        for j in 0..self.ncols {
            let mut acc = 0.0;
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                acc += self.values[p] * v[self.row_idx[p]];
            }
            out[j] += alpha * acc;
        }
    }

    pub fn transpose(&self) -> CscMatrix {
        let mut counts = vec![0usize; self.nrows + 1];
        for &i in &self.row_idx {
            counts[i + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut row_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for j in 0..self.ncols {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                row_idx[next[i]] = j;
                values[next[i]] = self.values[p];
                next[i] += 1;
            }
        }
        CscMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            col_ptr: counts,
            row_idx,
            values,
        }
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        let mut sums = vec![0.0f64; self.nrows];
        for (&i, &v) in self.row_idx.iter().zip(&self.values) {
            sums[i] += v.abs();
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.nrows * self.ncols];
        for (i, j, v) in self.triplets() {
            d[i * self.ncols + j] = v;
        }
        d
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// True when every stored entry lies on the diagonal.
    pub fn is_diagonal(&self) -> bool {
        self.triplets().all(|(i, j, _)| i == j)
    }

    /// Columns selected in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> CscMatrix {
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for &j in cols {
            let (r, v) = self.col(j);
            row_idx.extend_from_slice(r);
            values.extend_from_slice(v);
            col_ptr.push(row_idx.len());
        }
        CscMatrix {
            nrows: self.nrows,
            ncols: cols.len(),
            col_ptr,
            row_idx,
            values,
        }
    }
}

/// Diagonal matrix stored by its entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagMat(pub Vec<f64>);

impl DiagMat {
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn entries(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for DiagMat {
    fn from(v: Vec<f64>) -> Self {
        DiagMat(v)
    }
}

/// Symmetric matrix holding only its lower triangle (row >= col).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    lower: CscMatrix,
}

impl SymMatrix {
    /// Wraps a lower-triangular CSC matrix.
    pub fn from_lower(lower: CscMatrix) -> Result<Self, SparseError> {
        check_len(lower.nrows(), lower.ncols())?;
        for (i, j, _) in lower.triplets() {
            if i < j {
                return Err(SparseError::BadRowIndices { col: j });
            }
        }
        Ok(SymMatrix { lower })
    }

    /// Keeps the lower triangle of a full symmetric matrix.
    pub fn from_full(full: &CscMatrix) -> Result<Self, SparseError> {
        check_len(full.nrows(), full.ncols())?;
        let t: Vec<_> = full.triplets().filter(|&(i, j, _)| i >= j).collect();
        Ok(SymMatrix {
            lower: CscMatrix::from_triplets(full.nrows(), full.ncols(), &t)?,
        })
    }

    /// Triplets may name either triangle; they are mirrored into the lower one and summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, SparseError> {
        let t: Vec<_> = triplets
            .iter()
            .map(|&(i, j, v)| if i >= j { (i, j, v) } else { (j, i, v) })
            .collect();
        Ok(SymMatrix {
            lower: CscMatrix::from_triplets(n, n, &t)?,
        })
    }

    pub fn n(&self) -> usize {
        self.lower.ncols()
    }
    pub fn lower(&self) -> &CscMatrix {
        &self.lower
    }
    pub fn lower_mut(&mut self) -> &mut CscMatrix {
        &mut self.lower
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>, SparseError> {
        check_len(self.n(), v.len())?;
        let mut out = vec![0.0; self.n()];
        self.gaxpy(1.0, v, &mut out);
        Ok(out)
    }

    /// `out += alpha * K v` using both triangles.
    pub fn gaxpy(&self, alpha: f64, v: &[f64], out: &mut [f64]) {
        let l = &self.lower;
        assert_eq!(v.len(), l.ncols());
        assert_eq!(out.len(), l.ncols());
        for j in 0..l.ncols() {
            let vj = v[j];
            let mut acc = 0.0;
            for p in l.col_ptr[j]..l.col_ptr[j + 1] {
                let i = l.row_idx[p];
                let a = l.values[p];
                out[i] += alpha * a * vj;
                if i != j {
                    acc += a * v[i];
                }
            }
            out[j] += alpha * acc;
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n();
        let mut d = vec![0.0; n * n];
        for (i, j, v) in self.lower.triplets() {
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
        d
    }

    pub fn inf_norm(&self) -> f64 {
        let mut sums = vec![0.0f64; self.n()];
        for (i, j, v) in self.lower.triplets() {
            sums[i] += v.abs();
            if i != j {
                sums[j] += v.abs();
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    /// Storage positions of the diagonal entries; `None` where the diagonal is structurally zero.
    pub fn diagonal_positions(&self) -> Vec<Option<usize>> {
        (0..self.n())
            .map(|j| {
                let start = self.lower.col_ptr[j];
                let end = self.lower.col_ptr[j + 1];
                (start < end && self.lower.row_idx[start] == j).then_some(start)
            })
            .collect()
    }
}

/// Pattern of `A·diag(w)·Aᵀ + diag(d)` computed once and refilled numerically.
#[derive(Debug, Clone)]
pub struct NormalPattern {
    pattern: SymMatrix,
    // For each column of A, the target slot of each (p >= q) pair of its entries.
    pair_ptr: Vec<usize>,
    pair_pos: Vec<usize>,
    diag_pos: Vec<usize>,
}

impl NormalPattern {
    pub fn new(a: &CscMatrix) -> Self {
        let m = a.nrows();
        let mut t: Vec<(usize, usize, f64)> = (0..m).map(|i| (i, i, 0.0)).collect();
        for j in 0..a.ncols() {
            let (rows, _) = a.col(j);
            for (x, &p) in rows.iter().enumerate() {
                for &q in &rows[..=x] {
                    t.push((p, q, 0.0));
                }
            }
        }
        let pattern = SymMatrix {
            lower: CscMatrix::from_triplets(m, m, &t).expect("indices from a valid matrix"),
        };
        let lower = &pattern.lower;
        let slot = |i: usize, j: usize| -> usize {
            let (r, _) = lower.col(j);
            lower.col_ptr[j] + r.binary_search(&i).expect("slot in pattern")
        };
        let mut pair_ptr = vec![0];
        let mut pair_pos = Vec::new();
        for j in 0..a.ncols() {
            let (rows, _) = a.col(j);
            for (x, &p) in rows.iter().enumerate() {
                for &q in &rows[..=x] {
                    pair_pos.push(slot(p, q));
                }
            }
            pair_ptr.push(pair_pos.len());
        }
        let diag_pos = (0..m).map(|i| slot(i, i)).collect();
        NormalPattern {
            pattern,
            pair_ptr,
            pair_pos,
            diag_pos,
        }
    }

    pub fn pattern(&self) -> &SymMatrix {
        &self.pattern
    }

    pub fn assemble(&self, a: &CscMatrix, w: &[f64], d: &[f64]) -> Result<SymMatrix, SparseError> {
        let mut out = self.pattern.clone();
        self.assemble_into(a, w, d, &mut out)?;
        Ok(out)
    }

    /// Refills the values of `out`, which must carry this pattern.
    pub fn assemble_into(
        &self,
        a: &CscMatrix,
        w: &[f64],
        d: &[f64],
        out: &mut SymMatrix,
    ) -> Result<(), SparseError> {
        check_len(a.ncols(), w.len())?;
        check_len(a.nrows(), d.len())?;
        check_len(self.pattern.lower.nnz(), out.lower.nnz())?;
        let vals = out.lower.values_mut();
        vals.iter_mut().for_each(|v| *v = 0.0);
        for (i, &di) in d.iter().enumerate() {
            vals[self.diag_pos[i]] += di;
        }
        for j in 0..a.ncols() {
            let (_, av) = a.col(j);
            let mut k = self.pair_ptr[j];
            for x in 0..av.len() {
                let wx = w[j] * av[x];
                for &aq in &av[..=x] {
                    vals[self.pair_pos[k]] += wx * aq;
                    k += 1;
                }
            }
        }
        Ok(())
    }
}

/// `A·diag(w)·Aᵀ + diag(d)`, lower triangle stored.
pub fn ata_plus_diag(a: &CscMatrix, w: &DiagMat, d: &DiagMat) -> Result<SymMatrix, SparseError> {
    check_len(a.ncols(), w.len())?;
    check_len(a.nrows(), d.len())?;
    NormalPattern::new(a).assemble(a, &w.0, &d.0)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
