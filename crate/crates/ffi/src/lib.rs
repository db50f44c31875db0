//! C ABI for the psipm solver.
//!
//! Models and results are opaque handles owned by the caller and released
//! with the matching `_free` function. Every entry point returns a
//! [`PsipmStatus`]; on failure [`psipm_last_error`] describes the cause.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::time::Instant;

use psipm::sparse::CscMatrix;
use psipm::{Mode, QpModel, RegParams, SolveResult, SolverOptions, Status};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsipmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ModelError = 3,
    SolveError = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsipmMode {
    Direct = 0,
    GmresLdl = 1,
    PcgChol = 2,
    SlackDirect = 3,
}

/// Outcome of a finished solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsipmOutcome {
    Optimal = 0,
    MaxIterations = 1,
    Failed = 2,
}

/// Solver settings. Start from [`psipm_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsipmOptions {
    pub mode: PsipmMode,
    pub tol: f64,
    pub reg_scale: f64,
    /// Fixed value for both regularization parameters; `<= 0` uses the norm-based rule.
    pub reg: f64,
    pub sigma_r: f64,
    pub max_ppm: usize,
    pub max_ipm: usize,
    /// Krylov iterations per solve; 0 picks the mode default.
    pub krylov_budget: usize,
    pub refresh_frac: f64,
}

/// Summary of a solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsipmReport {
    pub outcome: PsipmOutcome,
    pub ppm_iters: usize,
    pub ipm_iters: usize,
    pub krylov_iters: usize,
    pub factorizations: usize,
    pub objective: f64,
    pub rho: f64,
    pub delta: f64,
    pub dual_residual: f64,
    pub primal_residual: f64,
    pub mu: f64,
    pub time_s: f64,
}

/// Opaque problem handle.
pub struct PsipmModel {
    model: QpModel,
}

/// Opaque result handle.
pub struct PsipmResult {
    result: SolveResult,
    primal: Vec<f64>,
    time_s: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(PsipmStatus, String);

fn fail<T>(status: PsipmStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, converting errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PsipmStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PsipmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_error(format!("panic: {msg}"));
            PsipmStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(PsipmStatus::NullPointer, format!("{what} is null"));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// # Safety
/// Same contract as [`input`]; the column pointer array has `ncols + 1` entries.
unsafe fn csc(
    nrows: usize,
    ncols: usize,
    col_ptr: *const usize,
    row_idx: *const usize,
    values: *const f64,
    what: &str,
) -> Result<CscMatrix, Failure> {
    let cp = input(col_ptr, ncols + 1, &format!("{what} column pointers"))?.to_vec();
    let nnz = cp[ncols];
    let ri = input(row_idx, nnz, &format!("{what} row indices"))?.to_vec();
    let v = input(values, nnz, &format!("{what} values"))?.to_vec();
    CscMatrix::new(nrows, ncols, cp, ri, v).map_err(|e| Failure(PsipmStatus::ModelError, format!("{what}: {e}")))
}

fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return fail(PsipmStatus::NullPointer, "output pointer is null");
    }
    // SAFETY: checked non-null; the caller provides writable storage.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

fn mode_from(m: PsipmMode) -> Mode {
    match m {
        PsipmMode::Direct => Mode::Direct,
        PsipmMode::GmresLdl => Mode::GmresLdl,
        PsipmMode::PcgChol => Mode::PcgChol,
        PsipmMode::SlackDirect => Mode::SlackDirect,
    }
}

fn options_from(o: &PsipmOptions) -> SolverOptions {
    SolverOptions {
        mode: mode_from(o.mode),
        tol: o.tol,
        reg_scale: o.reg_scale,
        reg: (o.reg > 0.0).then(|| RegParams::new(o.reg, o.reg)),
        sigma_r: o.sigma_r,
        max_ppm: o.max_ppm,
        max_ipm: o.max_ipm,
        krylov_budget: (o.krylov_budget > 0).then_some(o.krylov_budget),
        refresh_frac: o.refresh_frac,
        ..SolverOptions::default()
    }
}

/// Message for the last failed call on this thread, or null. The string is
/// owned by the library and valid until the next psipm call on the thread.
#[no_mangle]
pub extern "C" fn psipm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn psipm_version() -> *const c_char {
    static V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    V.as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn psipm_options_default() -> PsipmOptions {
    let d = SolverOptions::default();
    PsipmOptions {
        mode: PsipmMode::Direct,
        tol: d.tol,
        reg_scale: d.reg_scale,
        reg: 0.0,
        sigma_r: d.sigma_r,
        max_ppm: d.max_ppm,
        max_ipm: d.max_ipm,
        krylov_budget: 0,
        refresh_frac: d.refresh_frac,
    }
}

/// Reads an MPS or QPS file (optionally gzipped).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn psipm_model_read(path: *const c_char, out: *mut *mut PsipmModel) -> PsipmStatus {
    guard(|| {
        if path.is_null() {
            return fail(PsipmStatus::NullPointer, "path is null");
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(PsipmStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let model = QpModel::read(p).map_err(|e| Failure(PsipmStatus::ModelError, e.to_string()))?;
        store(out, PsipmModel { model })
    })
}

/// Builds `min ½xᵀHx + gᵀx  s.t. Ax = b` from CSC arrays with 0-based indices.
///
/// `H` is `d×d` with both triangles stored; pass null `h_col_ptr` for an LP.
/// `A` is `m×d`. `cone[j] != 0` marks `x_j ≥ 0`; null `cone` makes every
/// variable nonnegative.
///
/// # Safety
/// Every non-null array must hold the documented number of elements.
#[no_mangle]
pub unsafe extern "C" fn psipm_model_from_csc(
    d: usize,
    m: usize,
    h_col_ptr: *const usize,
    h_row_idx: *const usize,
    h_values: *const f64,
    a_col_ptr: *const usize,
    a_row_idx: *const usize,
    a_values: *const f64,
    g: *const f64,
    b: *const f64,
    cone: *const u8,
    out: *mut *mut PsipmModel,
) -> PsipmStatus {
    guard(|| {
        let h = if h_col_ptr.is_null() {
            CscMatrix::zeros(d, d)
        } else {
            csc(d, d, h_col_ptr, h_row_idx, h_values, "H")?
        };
        let a = csc(m, d, a_col_ptr, a_row_idx, a_values, "A")?;
        let g = input(g, d, "g")?.to_vec();
        let b = input(b, m, "b")?.to_vec();
        let cone = if cone.is_null() {
            vec![true; d]
        } else {
            input(cone, d, "cone")?.iter().map(|&c| c != 0).collect()
        };
        let model = QpModel::new(h, a, g, b, cone).map_err(|e| Failure(PsipmStatus::ModelError, e.to_string()))?;
        store(out, PsipmModel { model })
    })
}

/// Number of variables and constraints of the standard-form model.
///
/// # Safety
/// `model` must come from this library; `d` and `m` may be null.
#[no_mangle]
pub unsafe extern "C" fn psipm_model_dims(model: *const PsipmModel, d: *mut usize, m: *mut usize) -> PsipmStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(PsipmStatus::NullPointer, "model is null");
        };
        if let Some(d) = d.as_mut() {
            *d = model.model.d();
        }
        if let Some(m) = m.as_mut() {
            *m = model.model.m();
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psipm_model_free(model: *mut PsipmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Solves `model`. A null `options` uses the defaults. A result handle is
/// produced whenever the solver ran, including max-iteration and failed
/// outcomes; check the report's `outcome`.
///
/// # Safety
/// `model` must be a live handle, `options` null or readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn psipm_solve(
    model: *const PsipmModel,
    options: *const PsipmOptions,
    out: *mut *mut PsipmResult,
) -> PsipmStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(PsipmStatus::NullPointer, "model is null");
        };
        let opts = options.as_ref().copied().unwrap_or_else(|| psipm_options_default());
        let t = Instant::now();
        let result = psipm::solve(&model.model, &options_from(&opts)).map_err(|e| {
            let status = match e {
                psipm::ppm::SolveError::InvalidOption(_) => PsipmStatus::InvalidArgument,
                _ => PsipmStatus::SolveError,
            };
            Failure(status, e.to_string())
        })?;
        let primal = result.primal(&model.model);
        store(
            out,
            PsipmResult {
                result,
                primal,
                time_s: t.elapsed().as_secs_f64(),
            },
        )
    })
}

/// # Safety
/// `result` must be a live handle and `report` writable.
#[no_mangle]
pub unsafe extern "C" fn psipm_result_report(result: *const PsipmResult, report: *mut PsipmReport) -> PsipmStatus {
    guard(|| {
        let (Some(r), Some(report)) = (result.as_ref(), report.as_mut()) else {
            return fail(PsipmStatus::NullPointer, "result or report is null");
        };
        let s = &r.result;
        let outcome = match s.status {
            Status::Optimal => PsipmOutcome::Optimal,
            Status::MaxIterations => PsipmOutcome::MaxIterations,
            Status::Failed(_) => PsipmOutcome::Failed,
        };
        *report = PsipmReport {
            outcome,
            ppm_iters: s.stats.ppm_iters,
            ipm_iters: s.stats.ipm_iters,
            krylov_iters: s.stats.krylov_iters,
            factorizations: s.stats.factorizations,
            objective: s.objective,
            rho: s.reg.rho,
            delta: s.reg.delta,
            dual_residual: s.measures.0,
            primal_residual: s.measures.1,
            mu: s.measures.2,
            time_s: r.time_s,
        };
        if let Status::Failed(msg) = &s.status {
            set_error(msg.clone());
        }
        Ok(())
    })
}

/// Length of the primal solution in the variables of the source problem.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn psipm_result_primal_len(result: *const PsipmResult) -> usize {
    result.as_ref().map_or(0, |r| r.primal.len())
}

/// Copies the primal solution into `buf`, which must hold at least
/// [`psipm_result_primal_len`] values.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn psipm_result_primal(result: *const PsipmResult, buf: *mut f64, len: usize) -> PsipmStatus {
    guard(|| {
        let Some(r) = result.as_ref() else {
            return fail(PsipmStatus::NullPointer, "result is null");
        };
        if buf.is_null() {
            return fail(PsipmStatus::NullPointer, "buffer is null");
        }
        if len < r.primal.len() {
            return fail(
                PsipmStatus::InvalidArgument,
                format!("buffer holds {len} values, need {}", r.primal.len()),
            );
        }
        slice::from_raw_parts_mut(buf, r.primal.len()).copy_from_slice(&r.primal);
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psipm_result_free(result: *mut PsipmResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
