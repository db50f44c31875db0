//! Acceptance criteria 1 to 10. Each test writes one PASS/FAIL line to stderr
//! (bypassing output capture) and then asserts the verdict.

mod common;

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use common::oracles::{krylov_suite, ldl_suite};
use common::theory::{damping_suite, schur_bounds_suite, spectral_suite};
use common::{data_dir, planted, rel_err};
use psipm::ppm::StopRule;
use psipm::{solve, Mode, QpModel, RegParams, SolveResult, SolverOptions, Status};

/// Regularization reported for every medium Netlib run in the published tables.
const REG: f64 = 7e-8;

/// Problem, published objective, published GMRES factorization count at tol 1e-5.
const MEDIUM: [(&str, f64, usize); 5] = [
    ("25fv47", 5501.85, 8),
    ("80bau3b", 987224.23, 12),
    ("fit2d", -68464.27, 7),
    ("pilot87", 301.94, 12),
    ("d6cube", 315.50, 5),
];

fn verdict(id: u32, title: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {id:>2} {tag}: {title}");
    for line in detail.lines() {
        let _ = writeln!(err, "    {line}");
    }
    assert!(pass, "criterion {id} failed: {title}\n{detail}");
}

struct Run {
    result: SolveResult,
    seconds: f64,
}

impl Run {
    fn summary(&self) -> String {
        let s = &self.result.stats;
        format!(
            "{} ppm {} ipm {} krylov {} fact {} obj {:.6} ({:.1}s)",
            self.result.status.label(),
            s.ppm_iters,
            s.ipm_iters,
            s.krylov_iters,
            s.factorizations,
            self.result.objective,
            self.seconds
        )
    }

    fn optimal(&self) -> bool {
        self.result.status == Status::Optimal
    }
}

fn model(name: &str) -> &'static QpModel {
    static MODELS: OnceLock<Mutex<HashMap<String, &'static QpModel>>> = OnceLock::new();
    let mut map = MODELS.get_or_init(Default::default).lock().unwrap();
    map.entry(name.to_string()).or_insert_with(|| {
        let m = QpModel::read(data_dir().join(format!("{name}.mps.gz"))).unwrap();
        Box::leak(Box::new(m))
    })
}

fn run(name: &str, mode: Mode, tol: f64) -> Run {
    let opts = SolverOptions {
        reg: Some(RegParams::new(REG, REG)),
        ..SolverOptions::default().with_mode(mode).with_tol(tol)
    };
    let t = Instant::now();
    let result = solve(model(name), &opts).unwrap();
    Run {
        result,
        seconds: t.elapsed().as_secs_f64(),
    }
}

/// Direct-mode runs shared by criteria 1 and 9.
fn direct_runs() -> &'static HashMap<&'static str, Run> {
    static RUNS: OnceLock<HashMap<&'static str, Run>> = OnceLock::new();
    RUNS.get_or_init(|| MEDIUM.iter().map(|&(n, _, _)| (n, run(n, Mode::Direct, 1e-5))).collect())
}

#[test]
fn criterion_01_direct_objectives() {
    let runs = direct_runs();
    let mut pass = true;
    let mut detail = String::new();
    for (name, published, _) in MEDIUM {
        let r = &runs[name];
        let err = rel_err(r.result.objective, published);
        let ok = r.optimal() && err <= 1e-4;
        pass &= ok;
        detail += &format!("{name}: {} rel err {err:.2e} vs {published} {}\n", r.summary(), mark(ok));
    }
    verdict(1, "direct-mode objectives within 1e-4 of the published values", pass, &detail);
}

#[test]
fn criterion_02_gmres_reuse() {
    let mut pass = true;
    let mut detail = String::new();
    for (name, _, published_fact) in MEDIUM {
        let r = run(name, Mode::GmresLdl, 1e-5);
        let s = &r.result.stats;
        let half = 2 * s.factorizations <= s.ipm_iters;
        let cap = s.factorizations as f64 <= 1.6 * published_fact as f64;
        let ok = r.optimal() && half && cap;
        pass &= ok;
        detail += &format!(
            "{name}: {} | fact <= ipm/2: {half}, fact <= 1.6*{published_fact}: {cap} {}\n",
            r.summary(),
            mark(ok)
        );
    }
    verdict(2, "gmres-ldl factorizations <= IPM/2 and <= 1.6x published count", pass, &detail);
}

#[test]
fn criterion_03_tighter_tolerance_reuse() {
    let loose = run("pilot87", Mode::GmresLdl, 1e-5);
    let tight = run("pilot87", Mode::GmresLdl, 1e-8);
    let ratio = |r: &Run| r.result.stats.ipm_iters as f64 / r.result.stats.factorizations.max(1) as f64;
    let (a, b) = (ratio(&loose), ratio(&tight));
    let pass = loose.optimal() && tight.optimal() && b >= a - 0.5;
    let detail = format!(
        "tol 1e-5: {} ratio {a:.2}\ntol 1e-8: {} ratio {b:.2}\n",
        loose.summary(),
        tight.summary()
    );
    verdict(3, "PILOT87 IPM/factorization ratio at 1e-8 >= ratio at 1e-5 - 0.5", pass, &detail);
}

#[test]
fn criterion_04_pcg_subset() {
    let mut pass = true;
    let mut detail = String::new();
    for (name, published, _) in MEDIUM {
        let r = run(name, Mode::PcgChol, 1e-5);
        let s = &r.result.stats;
        let err = rel_err(r.result.objective, published);
        let ok = r.optimal() && err <= 1e-4 && 2 * s.factorizations <= s.ipm_iters;
        pass &= ok;
        detail += &format!("{name}: {} rel err {err:.2e} {}\n", r.summary(), mark(ok));
    }
    verdict(4, "pcg-chol optimal, objectives within 1e-4, factorizations <= IPM/2", pass, &detail);
}

#[test]
fn criterion_05_damping_lemma() {
    let t = Instant::now();
    let d = damping_suite(2024, 10_000);
    let secs = t.elapsed().as_secs_f64();
    let pass = d.cases == 10_000
        && d.da_violations == 0
        && d.delta_violations == 0
        && d.da_max_rel <= 1e-12
        && d.delta_max_rel <= 1e-12
        && secs < 1.0;
    let detail = format!(
        "{} cases in {secs:.2}s: |D_A| < |D_C| violations {}, |Δ1| < |Δ2| violations {} (exact arithmetic)\n\
         closed form vs direct evaluation: max rel {:.1e} (D_A), {:.1e} (Δ); f64 strictness losses {}",
        d.cases, d.da_violations, d.delta_violations, d.da_max_rel, d.delta_max_rel, d.float_violations
    );
    verdict(5, "damping lemma on 10,000 log-uniform tuples", pass, &detail);
}

#[test]
fn criterion_06_spectral_interval() {
    let t = Instant::now();
    let s = spectral_suite(2025, 100);
    let pass = s.cases == 100 && s.unit_deficits == 0 && s.outside == 0;
    let detail = format!(
        "{} instances in {:.2}s: unit-eigenvalue deficits {}\n\
         eigenvalues outside the published interval: {} in {} instances ({} of them with mixed-sign D_A)\n\
         outside the sign-aware interval: {}; max lifted eigenpair residual {:.1e}",
        s.cases,
        t.elapsed().as_secs_f64(),
        s.unit_deficits,
        s.outside,
        s.instances_outside,
        s.outside_with_mixed_sign,
        s.outside_sign_aware,
        s.max_pair_residual
    );
    verdict(6, "spectrum of S(Θ)^-1 S(Θ̂) within the cluster interval", pass, &detail);
}

#[test]
fn criterion_07_schur_bounds() {
    let s = schur_bounds_suite(2026, 10_000);
    let pass = s.cases == 10_000 && s.exact_violations == 0 && s.float_violations == 0 && s.limit_max_rel <= 1e-10;
    let detail = format!(
        "{} cases: strict-bound violations {} (exact arithmetic), f64 outside the closed bounds {}, f64 ties {}\n\
         limits at θ^-1 = 1e-16, 1e16: max rel err {:.1e} for ρ,δ >= 1e-6 ({:.1e} over the full range)",
        s.cases, s.exact_violations, s.float_violations, s.float_ties, s.limit_max_rel, s.limit_max_rel_full
    );
    verdict(7, "Schur diagonal inside (ρ/(δρ+1), 1/δ) with correct limits", pass, &detail);
}

#[test]
fn criterion_08_proximal_rate() {
    let dist = |pl: &common::Planted, r: &SolveResult| {
        let dx: f64 = r.iterate.x.iter().zip(&pl.x).map(|(a, b)| (a - b) * (a - b)).sum();
        let dy: f64 = r.iterate.y.iter().zip(&pl.y).map(|(a, b)| (a - b) * (a - b)).sum();
        (dx + dy).sqrt()
    };
    let mut wins = 0;
    let mut detail = String::new();
    for seed in 0..20 {
        let pl = planted(500 + seed, 10, 4, false);
        let solve_with = |reg: f64| {
            let opts = SolverOptions {
                reg: Some(RegParams::new(reg, reg)),
                max_ppm: 10,
                max_ipm: 200,
                stop_rule: StopRule::Exact { tol: 1e-10 },
                ..SolverOptions::default().with_tol(1e-12)
            };
            solve(&pl.model, &opts).unwrap()
        };
        let (small, large) = (solve_with(1e-6), solve_with(1e-2));
        let (ds, dl) = (dist(&pl, &small), dist(&pl, &large));
        let ok = ds <= dl;
        wins += ok as usize;
        detail += &format!(
            "seed {seed}: ρ=1e-6 {:.2e} ({} outer), ρ=1e-2 {:.2e} ({} outer) {}\n",
            ds,
            small.stats.ppm_iters,
            dl,
            large.stats.ppm_iters,
            mark(ok)
        );
    }
    detail += &format!("{wins}/20 seeds");
    verdict(8, "smaller ρ gives a closer point after 10 exact outer steps", wins >= 18, &detail);
}

#[test]
fn criterion_09_warm_start_decay() {
    let runs = direct_runs();
    let mut pass = true;
    let mut detail = String::new();
    for name in ["25fv47", "pilot87"] {
        let r = &runs[name];
        let per = &r.result.stats.inner_per_outer;
        let late = &per[per.len() / 2..];
        let avg = late.iter().sum::<usize>() as f64 / late.len().max(1) as f64;
        let ok = r.optimal() && avg <= 2.0;
        pass &= ok;
        detail += &format!("{name}: {} | late average {avg:.2} over {per:?} {}\n", r.summary(), mark(ok));
    }
    verdict(9, "inner iterations over the final half of outer iterations average <= 2", pass, &detail);
}

#[test]
fn criterion_10_linear_algebra_oracles() {
    let t = Instant::now();
    let ldl = ldl_suite(2027, 300);
    let kry = krylov_suite(2028, 300);
    let secs = t.elapsed().as_secs_f64();
    let pass = ldl.failures.is_empty() && kry.failures.is_empty() && secs < 10.0;
    let mut detail = format!(
        "LDLᵀ: {} cases, {} failures; Krylov vs dense: {} cases, {} failures; {secs:.2}s\n",
        ldl.cases,
        ldl.failures.len(),
        kry.cases,
        kry.failures.len()
    );
    for f in ldl.failures.iter().chain(&kry.failures).take(10) {
        detail += &format!("{f}\n");
    }
    verdict(10, "LDLᵀ inertia/residual and Krylov oracles", pass, &detail);
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "<- fails"
    }
}
