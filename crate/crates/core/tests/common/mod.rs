#![allow(dead_code)]

pub mod oracles;
pub mod theory;

use psipm::sparse::CscMatrix;
use psipm::QpModel;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `exp` of a uniform draw over `[ln lo, ln hi]`.
pub fn log_uniform<R: Rng + ?Sized>(r: &mut R, lo: f64, hi: f64) -> f64 {
    r.gen_range(lo.ln()..hi.ln()).exp()
}

pub fn dense_matrix(r: &mut impl Rng, rows: usize, cols: usize, density: f64) -> Vec<f64> {
    (0..rows * cols)
        .map(|_| if r.gen_bool(density) { r.gen_range(-2.0..2.0) } else { 0.0 })
        .collect()
}

/// Row-major `rows×cols` matrix with a guaranteed diagonal so `A` has full row rank.
pub fn full_rank(r: &mut impl Rng, rows: usize, cols: usize, density: f64) -> Vec<f64> {
    let mut a = dense_matrix(r, rows, cols, density);
    for i in 0..rows.min(cols) {
        a[i * cols + i] = 3.0 + r.gen_range(0.0..1.0);
    }
    a
}

/// Random PSD `n×n` matrix `BᵀB` of rank `rank`.
pub fn psd(r: &mut impl Rng, n: usize, rank: usize) -> Vec<f64> {
    let b: Vec<f64> = (0..rank * n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] = (0..rank).map(|k| b[i * rank + k] * b[j * rank + k]).sum();
        }
    }
    h
}

/// LP or QP with a known strictly complementary primal-dual solution.
pub struct Planted {
    pub model: QpModel,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub objective: f64,
}

/// Builds `min ½xᵀHx + gᵀx s.t. Ax = b, x ≥ 0` with `x*` positive on the
/// first `m` coordinates, `s*` positive on the rest, and `g = Aᵀy* + s* − Hx*`.
/// For `H = 0` and a nonsingular basis the solution is unique.
pub fn planted(seed: u64, d: usize, m: usize, quadratic: bool) -> Planted {
    let mut r = rng(seed);
    let a = full_rank(&mut r, m, d, 0.6);
    let h = if quadratic { psd(&mut r, d, d / 2) } else { vec![0.0; d * d] };
    let x: Vec<f64> = (0..d).map(|j| if j < m { r.gen_range(0.5..3.0) } else { 0.0 }).collect();
    let s: Vec<f64> = (0..d).map(|j| if j < m { 0.0 } else { r.gen_range(0.5..3.0) }).collect();
    let y: Vec<f64> = (0..m).map(|_| r.gen_range(-2.0..2.0)).collect();
    let b: Vec<f64> = (0..m).map(|i| (0..d).map(|j| a[i * d + j] * x[j]).sum()).collect();
    let g: Vec<f64> = (0..d)
        .map(|j| {
            let aty: f64 = (0..m).map(|i| a[i * d + j] * y[i]).sum();
            let hx: f64 = (0..d).map(|k| h[j * d + k] * x[k]).sum();
            aty + s[j] - hx
        })
        .collect();
    let hm = CscMatrix::from_dense(d, d, &h);
    let am = CscMatrix::from_dense(m, d, &a);
    let model = QpModel::new(hm, am, g, b, vec![true; d]).expect("valid data");
    let objective = model.objective(&x);
    Planted {
        model,
        x,
        y,
        s,
        objective,
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|t| t * t).sum::<f64>().sqrt()
}

pub fn data_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/netlib")
}
