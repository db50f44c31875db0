//! Batch runs over problem files, CSV reports and Dolan–Moré performance profiles.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::QpModel;
use crate::ppm::{solve, SolveResult, SolverOptions, Status};
use crate::sparse::CscMatrix;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read manifest {path}: {source}")]
    Manifest { path: PathBuf, source: csv::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One row of the results table. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub problem: String,
    pub nnz_a: usize,
    pub nnz_h: usize,
    pub ppm_iters: usize,
    pub ipm_iters: usize,
    pub krylov_iters: usize,
    pub factorizations: usize,
    pub time_s: f64,
    pub objective: f64,
    pub reg: f64,
    pub status: String,
}

pub const CSV_HEADER: &str =
    "problem,nnz_a,nnz_h,ppm_iters,ipm_iters,krylov_iters,factorizations,time_s,objective,reg,status";

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == "opt"
    }

    fn failed(problem: &str, msg: &str) -> Self {
        log::error!("{problem}: {msg}");
        SolveReport {
            problem: problem.to_string(),
            nnz_a: 0,
            nnz_h: 0,
            ppm_iters: 0,
            ipm_iters: 0,
            krylov_iters: 0,
            factorizations: 0,
            time_s: 0.0,
            objective: f64::NAN,
            reg: f64::NAN,
            status: Status::Failed(String::new()).label().to_string(),
        }
    }

    fn from_result(problem: &str, model: &QpModel, r: &SolveResult, time_s: f64) -> Self {
        if let Status::Failed(msg) = &r.status {
            log::error!("{problem}: {msg}");
        }
        SolveReport {
            problem: problem.to_string(),
            nnz_a: model.a.nnz(),
            nnz_h: model.h.nnz(),
            ppm_iters: r.stats.ppm_iters,
            ipm_iters: r.stats.ipm_iters,
            krylov_iters: r.stats.krylov_iters,
            factorizations: r.stats.factorizations,
            time_s,
            objective: r.objective,
            reg: r.reg.rho,
            status: r.status.label().to_string(),
        }
    }
}

/// Solves a model and times it. Setup errors become a failed report.
pub fn run_model(problem: &str, model: &QpModel, opts: &SolverOptions) -> SolveReport {
    let t = Instant::now();
    match solve(model, opts) {
        Ok(r) => SolveReport::from_result(problem, model, &r, t.elapsed().as_secs_f64()),
        Err(e) => SolveReport::failed(problem, &e.to_string()),
    }
}

/// Reads and solves one problem. Built-in toys are addressed as `builtin:<name>`.
pub fn run_problem(path: &Path, opts: &SolverOptions) -> SolveReport {
    let name = problem_name(path);
    match load(path) {
        Ok(m) => run_model(&name, &m, opts),
        Err(e) => SolveReport::failed(&name, &e),
    }
}

fn load(path: &Path) -> Result<QpModel, String> {
    let s = path.to_string_lossy();
    if let Some(toy) = s.strip_prefix("builtin:") {
        return builtin(toy).ok_or_else(|| format!("unknown built-in problem {toy}"));
    }
    QpModel::read(path).map_err(|e| e.to_string())
}

/// File name with `.mps`/`.qps`/`.gz` extensions removed.
pub fn problem_name(path: &Path) -> String {
    let s = path.to_string_lossy();
    if let Some(toy) = s.strip_prefix("builtin:") {
        return toy.to_string();
    }
    let mut name = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| s.into_owned());
    for ext in [".gz", ".mps", ".qps", ".MPS", ".QPS"] {
        if let Some(stripped) = name.strip_suffix(ext) {
            name = stripped.to_string();
        }
    }
    name
}

/// Names of the built-in toy problems.
pub const BUILTINS: [&str; 3] = ["toy-eq", "toy-lp", "toy-qp"];

/// Small problems with closed-form solutions.
///
/// - `toy-eq`: `min x` s.t. `x = 1`, `x ≥ 0`; optimum 1.
/// - `toy-lp`: `min −x₁ − 2x₂` s.t. `x₁ + x₂ + x₃ = 4`, `x ≥ 0`; optimum −8.
/// - `toy-qp`: `min ½(x₁² + x₂²) − x₁` s.t. `x₁ + x₂ = 2`, `x ≥ 0`; optimum −0.25 at (1.5, 0.5).
pub fn builtin(name: &str) -> Option<QpModel> {
    let m = match name {
        "toy-eq" => QpModel::lp(CscMatrix::identity(1), vec![1.0], vec![1.0]),
        "toy-lp" => QpModel::lp(
            CscMatrix::from_dense(1, 3, &[1.0, 1.0, 1.0]),
            vec![-1.0, -2.0, 0.0],
            vec![4.0],
        ),
        "toy-qp" => QpModel::new(
            CscMatrix::identity(2),
            CscMatrix::from_dense(1, 2, &[1.0, 1.0]),
            vec![-1.0, 0.0],
            vec![2.0],
            vec![true, true],
        ),
        _ => return None,
    };
    Some(m.expect("toy data is valid").with_name(name))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    #[serde(default)]
    pub reference_objective: Option<f64>,
}

/// Reads a manifest CSV with columns `file` and optional `reference_objective`.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, BenchError> {
    let err = |source| BenchError::Manifest {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(err)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row.map_err(err)?);
    }
    Ok(out)
}

fn resolve(base: &Path, file: &str) -> PathBuf {
    if file.starts_with("builtin:") || Path::new(file).is_absolute() {
        PathBuf::from(file)
    } else {
        base.join(file)
    }
}

/// Runs every manifest entry, `jobs` at a time. Reports come back in manifest order.
pub fn run_suite(manifest: &Path, opts: &SolverOptions, jobs: usize) -> Result<Vec<SolveReport>, BenchError> {
    let entries = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let paths: Vec<PathBuf> = entries.iter().map(|e| resolve(base, &e.file)).collect();
    Ok(run_paths(&paths, opts, jobs))
}

/// Solves each path; the output order matches the input order.
pub fn run_paths(paths: &[PathBuf], opts: &SolverOptions, jobs: usize) -> Vec<SolveReport> {
    let jobs = jobs.max(1).min(paths.len().max(1));
    if jobs == 1 {
        return paths.iter().map(|p| run_problem(p, opts)).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<SolveReport>> = vec![None; paths.len()];
    let done = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= paths.len() {
                    break;
                }
                let r = run_problem(&paths[i], opts);
                done.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

pub fn write_csv<W: Write>(reports: &[SolveReport], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    if reports.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Time,
    IpmIters,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Time => "time",
            Metric::IpmIters => "ipm_iters",
        }
    }

    fn value(self, r: &SolveReport) -> f64 {
        if !r.is_optimal() {
            return f64::INFINITY;
        }
        match self {
            Metric::Time => r.time_s.max(1e-6),
            Metric::IpmIters => r.ipm_iters.max(1) as f64,
        }
    }
}

/// Dolan–Moré profile: for each solver, the sorted performance ratios paired
/// with the cumulative fraction of problems solved within that ratio.
/// Every solver must report the same problems in the same order. Failed runs
/// get an infinite ratio and never count as solved.
pub fn performance_profile(runs: &[(String, Vec<SolveReport>)], metric: Metric) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mut out = BTreeMap::new();
    let Some(n) = runs.first().map(|r| r.1.len()) else {
        return out;
    };
    let best: Vec<f64> = (0..n)
        .map(|i| {
            runs.iter()
                .map(|(_, r)| metric.value(&r[i]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    for (solver, reports) in runs {
        let mut ratios: Vec<f64> = reports
            .iter()
            .zip(&best)
            .map(|(r, b)| metric.value(r) / b)
            .filter(|v| v.is_finite())
            .collect();
        ratios.sort_by(f64::total_cmp);
        let pts = ratios
            .iter()
            .enumerate()
            .map(|(k, &t)| (t, (k + 1) as f64 / n as f64))
            .collect();
        out.insert(solver.clone(), pts);
    }
    out
}

/// Writes one `profile_<metric>_<solver>.dat` file per solver and metric.
pub fn write_profiles(dir: &Path, runs: &[(String, Vec<SolveReport>)]) -> Result<Vec<PathBuf>, BenchError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for metric in [Metric::Time, Metric::IpmIters] {
        for (solver, pts) in performance_profile(runs, metric) {
            let path = dir.join(format!("profile_{}_{}.dat", metric.name(), solver));
            let mut f = io::BufWriter::new(fs::File::create(&path)?);
            writeln!(f, "# ratio fraction")?;
            for (t, frac) in pts {
                writeln!(f, "{t} {frac}")?;
            }
            f.flush()?;
            written.push(path);
        }
    }
    Ok(written)
}
