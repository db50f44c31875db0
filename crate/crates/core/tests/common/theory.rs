//! Property suites for the diagonal damping lemma, the Schur diagonal
//! bounds and the eigenvalue clustering interval.

use std::cmp::Ordering;
use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_traits::{Float, Signed, ToPrimitive, Zero};
use psipm::newton::{d_a_entry, reduced_delta_entries, schur_diag_entry, spectral_interval_check};
use psipm::RegParams;
use rand::Rng;

use super::{log_uniform, psd, rng};

/// Exact dyadic number `m·2^e`. Every f64 is one, and sums and products stay
/// dyadic, so the exact checks never need a gcd.
#[derive(Clone, Debug)]
struct Dy {
    m: BigInt,
    e: i64,
}

impl Dy {
    fn new(v: f64) -> Dy {
        let (mant, exp, sign) = v.integer_decode();
        Dy { m: BigInt::from(mant) * sign, e: exp.into() }
    }

    fn one() -> Dy {
        Dy { m: BigInt::from(1), e: 0 }
    }

    fn aligned(&self, other: &Dy) -> (BigInt, BigInt) {
        let e = self.e.min(other.e);
        (&self.m << (self.e - e) as usize, &other.m << (other.e - e) as usize)
    }

    fn abs(&self) -> Dy {
        Dy { m: self.m.abs(), e: self.e }
    }

    fn cmp_abs(&self, other: &Dy) -> Ordering {
        let (a, b) = self.aligned(other);
        a.abs().cmp(&b.abs())
    }

    fn is_positive(&self) -> bool {
        self.m.is_positive()
    }

    fn to_f64(&self) -> f64 {
        let drop = self.m.bits().saturating_sub(64) as i64;
        let top = (&self.m >> drop as usize).to_f64().expect("64 bits fit");
        top * 2f64.powi((self.e + drop) as i32)
    }
}

impl Add for &Dy {
    type Output = Dy;
    fn add(self, rhs: &Dy) -> Dy {
        let (a, b) = self.aligned(rhs);
        Dy { m: a + b, e: self.e.min(rhs.e) }
    }
}

impl Sub for &Dy {
    type Output = Dy;
    fn sub(self, rhs: &Dy) -> Dy {
        let (a, b) = self.aligned(rhs);
        Dy { m: a - b, e: self.e.min(rhs.e) }
    }
}

impl Mul for &Dy {
    type Output = Dy;
    fn mul(self, rhs: &Dy) -> Dy {
        Dy { m: &self.m * &rhs.m, e: self.e + rhs.e }
    }
}

/// Exact quotient `n/d` of dyadic numbers, kept unreduced.
struct Frac {
    n: Dy,
    d: Dy,
}

impl Frac {
    fn sub(&self, other: &Frac) -> Frac {
        Frac { n: &(&self.n * &other.d) - &(&other.n * &self.d), d: &self.d * &other.d }
    }

    /// `|self| < |other|`.
    fn abs_lt(&self, other: &Frac) -> bool {
        (&self.n * &other.d).cmp_abs(&(&other.n * &self.d)) == Ordering::Less
    }

    /// Relative error of `approx` against this value.
    fn rel(&self, approx: f64) -> f64 {
        if self.n.m.is_zero() {
            return approx.abs();
        }
        let err = &(&Dy::new(approx) * &self.d) - &self.n;
        err.abs().to_f64() / self.n.abs().to_f64()
    }
}

/// Exact `1/(δ + 1/(t + ρ)) = (t + ρ)/(δ(t + ρ) + 1)`.
fn w_exact(t: &Dy, rho: &Dy, delta: &Dy) -> Frac {
    let s = t + rho;
    Frac { d: &(delta * &s) + &Dy::one(), n: s }
}

/// Exact `1/(r + n/d) = d/(r·d + n)`.
fn shifted_inverse(r: &Dy, w: &Frac) -> Frac {
    Frac { n: w.d.clone(), d: &(r * &w.d) + &w.n }
}

#[derive(Debug, Default)]
pub struct Damping {
    pub cases: usize,
    /// Exact `|D_A| ≥ |D_C|`.
    pub da_violations: usize,
    /// Exact `|Δ₁| ≥ |Δ₂|`.
    pub delta_violations: usize,
    /// Largest relative error of the f64 closed form for `D_A` against exact evaluation.
    pub da_max_rel: f64,
    /// Same for `Δ₁` and `Δ₂`.
    pub delta_max_rel: f64,
    /// f64 results where `|D_A| ≤ |D_C|` or `|Δ₁| ≤ |Δ₂|` fails even as a non-strict inequality.
    pub float_violations: usize,
}

/// `θ̂⁻¹`, `θ⁻¹` and `ρ = δ` drawn log-uniform over `[1e-8, 1e8]`.
pub fn damping_suite(seed: u64, cases: usize) -> Damping {
    let mut r = rng(seed);
    let mut out = Damping::default();
    for _ in 0..cases {
        let th = log_uniform(&mut r, 1e-8, 1e8);
        let t = log_uniform(&mut r, 1e-8, 1e8);
        let reg = log_uniform(&mut r, 1e-8, 1e8);
        let (qh, qt, qr) = (Dy::new(th), Dy::new(t), Dy::new(reg));
        out.cases += 1;

        let dc = Frac { n: &qh - &qt, d: Dy::one() };
        let wh = w_exact(&qh, &qr, &qr);
        let w = w_exact(&qt, &qr, &qr);
        let da = wh.sub(&w);
        if !da.abs_lt(&dc) {
            out.da_violations += 1;
        }
        let da_f = d_a_entry(th, t, reg, reg);
        out.da_max_rel = out.da_max_rel.max(da.rel(da_f));

        let d2 = shifted_inverse(&qr, &Frac { n: qt.clone(), d: Dy::one() })
            .sub(&shifted_inverse(&qr, &Frac { n: qh.clone(), d: Dy::one() }));
        let d1 = shifted_inverse(&qr, &w).sub(&shifted_inverse(&qr, &wh));
        if !d1.abs_lt(&d2) {
            out.delta_violations += 1;
        }
        let (d1_f, d2_f) = reduced_delta_entries(th, t, reg, reg);
        out.delta_max_rel = out.delta_max_rel.max(d1.rel(d1_f)).max(d2.rel(d2_f));
        if da_f.abs() > (th - t).abs() || d1_f.abs() > d2_f.abs() {
            out.float_violations += 1;
        }
    }
    out
}

#[derive(Debug, Default)]
pub struct SchurBounds {
    pub cases: usize,
    /// Exact value not strictly inside `(ρ/(δρ+1), 1/δ)`.
    pub exact_violations: usize,
    /// f64 value outside the closed interval computed in f64.
    pub float_violations: usize,
    /// f64 value equal to an endpoint (rounding ties).
    pub float_ties: usize,
    /// Worst relative distance to the limits at `θ⁻¹ = 1e-16` and `1e16`, for `ρ, δ ≥ 1e-6`.
    pub limit_max_rel: f64,
    /// Same over the whole `[1e-8, 1e8]` range, where the asymptotic gap `1e-16/ρ` or `1e-16/δ` may dominate.
    pub limit_max_rel_full: f64,
}

pub fn schur_bounds_suite(seed: u64, cases: usize) -> SchurBounds {
    let mut r = rng(seed);
    let mut out = SchurBounds::default();
    for _ in 0..cases {
        let t = log_uniform(&mut r, 1e-8, 1e8);
        let rho = log_uniform(&mut r, 1e-8, 1e8);
        let delta = log_uniform(&mut r, 1e-8, 1e8);
        out.cases += 1;
        let (qt, qr, qd) = (Dy::new(t), Dy::new(rho), Dy::new(delta));
        let w = w_exact(&qt, &qr, &qd);
        let lo = Frac { n: qr.clone(), d: &(&qd * &qr) + &Dy::one() };
        let hi = Frac { n: Dy::one(), d: qd };
        // All numerators and denominators are positive, so the sign of a difference decides.
        if !(w.sub(&lo).n.is_positive() && hi.sub(&w).n.is_positive()) {
            out.exact_violations += 1;
        }
        let wf = schur_diag_entry(t, rho, delta);
        let (lof, hif) = (rho / (delta * rho + 1.0), 1.0 / delta);
        if !(wf >= lof * (1.0 - 4.0 * f64::EPSILON) && wf <= hif * (1.0 + 4.0 * f64::EPSILON)) {
            out.float_violations += 1;
        } else if !(wf > lof && wf < hif) {
            out.float_ties += 1;
        }
        let e = ((schur_diag_entry(1e-16, rho, delta) - lof) / lof)
            .abs()
            .max(((schur_diag_entry(1e16, rho, delta) - hif) / hif).abs());
        out.limit_max_rel_full = out.limit_max_rel_full.max(e);
        if rho >= 1e-6 && delta >= 1e-6 {
            out.limit_max_rel = out.limit_max_rel.max(e);
        }
    }
    out
}

#[derive(Debug, Default)]
pub struct Spectral {
    pub cases: usize,
    /// Instances with fewer than `m` eigenvalues within 1e-8 of one.
    pub unit_deficits: usize,
    /// Non-unit eigenvalues outside the stated interval.
    pub outside: usize,
    /// Instances with at least one such eigenvalue.
    pub instances_outside: usize,
    /// Same counts against the interval that accounts for negative `D_A` entries.
    pub outside_sign_aware: usize,
    /// Of the instances outside the stated interval, how many had mixed-sign `D_A`.
    pub outside_with_mixed_sign: usize,
    pub max_pair_residual: f64,
}

/// `d ≤ 12`, `m ≤ 6`, PSD `H`, `θ⁻¹` and `θ̂⁻¹` log-uniform over `[1e-4, 1e4]`,
/// `ρ = δ` log-uniform over `[1e-3, 1]`.
pub fn spectral_suite(seed: u64, cases: usize) -> Spectral {
    let mut r = rng(seed);
    let mut out = Spectral::default();
    for _ in 0..cases {
        let d = r.gen_range(2..=12);
        let m = r.gen_range(1..=6.min(d - 1));
        let rank = r.gen_range(0..=d);
        let h = DMatrix::from_row_slice(d, d, &psd(&mut r, d, rank));
        let a = DMatrix::from_fn(m, d, |i, j| if i == j { 2.0 } else if r.gen_bool(0.5) { r.gen_range(-1.0..1.0) } else { 0.0 });
        let t: Vec<f64> = (0..d).map(|_| log_uniform(&mut r, 1e-4, 1e4)).collect();
        let th: Vec<f64> = (0..d).map(|_| log_uniform(&mut r, 1e-4, 1e4)).collect();
        let reg = log_uniform(&mut r, 1e-3, 1.0);
        let c = spectral_interval_check(&h, &a, &t, &th, RegParams::new(reg, reg)).expect("small and nonsingular");
        out.cases += 1;
        if c.unit_count < m {
            out.unit_deficits += 1;
        }
        out.outside += c.outside.len();
        out.outside_sign_aware += c.outside_sign_aware.len();
        if !c.outside.is_empty() {
            out.instances_outside += 1;
            let pos = t.iter().zip(&th).any(|(a, b)| b > a);
            let neg = t.iter().zip(&th).any(|(a, b)| b < a);
            if pos && neg {
                out.outside_with_mixed_sign += 1;
            }
        }
        out.max_pair_residual = out.max_pair_residual.max(c.max_pair_residual);
    }
    out
}

/// Spectral suite restricted to `θ̂⁻¹ ≥ θ⁻¹` (all `D_A` entries nonnegative).
pub fn spectral_suite_monotone(seed: u64, cases: usize) -> Spectral {
    let mut r = rng(seed);
    let mut out = Spectral::default();
    for _ in 0..cases {
        let d = r.gen_range(2..=12);
        let m = r.gen_range(1..=6.min(d - 1));
        let rank = r.gen_range(0..=d);
        let h = DMatrix::from_row_slice(d, d, &psd(&mut r, d, rank));
        let a = DMatrix::from_fn(m, d, |i, j| if i == j { 2.0 } else if r.gen_bool(0.5) { r.gen_range(-1.0..1.0) } else { 0.0 });
        let t: Vec<f64> = (0..d).map(|_| log_uniform(&mut r, 1e-4, 1e4)).collect();
        let th: Vec<f64> = t.iter().map(|&v| v * log_uniform(&mut r, 1.0, 1e3)).collect();
        let reg = log_uniform(&mut r, 1e-3, 1.0);
        let c = spectral_interval_check(&h, &a, &t, &th, RegParams::new(reg, reg)).expect("small and nonsingular");
        out.cases += 1;
        if c.unit_count < m {
            out.unit_deficits += 1;
        }
        out.outside += c.outside.len();
        out.outside_sign_aware += c.outside_sign_aware.len();
        if !c.outside.is_empty() {
            out.instances_outside += 1;
        }
        out.max_pair_residual = out.max_pair_residual.max(c.max_pair_residual);
    }
    out
}
