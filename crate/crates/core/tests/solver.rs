mod common;

use common::{data_dir, norm2, planted, rel_err, rng};
use psipm::bench::builtin;
use psipm::backend::DirectAugmented;
use psipm::ipm::{newton_rhs, solve_subproblem, start_point, Formulation, InnerConfig, Iterate, Problem};
use psipm::ppm::{outer_residual, StopRule};
use psipm::{solve, Mode, QpModel, RegParams, SolveResult, SolverOptions, Status};
use rand::Rng;

const MODES: [Mode; 4] = [Mode::Direct, Mode::SlackDirect, Mode::GmresLdl, Mode::PcgChol];

/// Small Netlib problems with their reference objectives.
const CORPUS: [(&str, f64); 6] = [
    ("afiro", -464.7531428571429),
    ("blend", -30.81214984582821),
    ("sc50a", -64.5750770585645),
    ("share2b", -415.73224074142104),
    ("e226", -18.751929066370547),
    ("bandm", -158.62801845012083),
];

fn netlib(name: &str) -> QpModel {
    QpModel::read(data_dir().join(format!("{name}.mps.gz"))).unwrap()
}

fn with_reg(mode: Mode, tol: f64, reg: f64) -> SolverOptions {
    SolverOptions {
        reg: Some(RegParams::new(reg, reg)),
        ..SolverOptions::default().with_mode(mode).with_tol(tol)
    }
}

fn check_optimal(r: &SolveResult, tol: f64, label: &str) {
    assert_eq!(r.status, Status::Optimal, "{label}");
    let (d, p, mu) = r.measures;
    assert!(d <= tol && p <= tol && mu <= tol, "{label}: measures {:?}", r.measures);
}

fn check_interior(r: &SolveResult, model: &QpModel, mode: Mode) {
    let p = Problem::new(model, r.reg, mode.formulation());
    assert!(r.iterate.cone_primal(&p).iter().all(|&v| v > 0.0), "{mode}: cone primal");
    assert!(r.iterate.s.iter().all(|&v| v > 0.0), "{mode}: dual slacks");
}

fn check_bookkeeping(r: &SolveResult) {
    let st = &r.stats;
    assert_eq!(st.inner_per_outer.iter().sum::<usize>(), st.ipm_iters);
    assert_eq!(st.inner_per_outer.len(), st.ppm_iters);
    assert_eq!(st.mu_history.len(), st.ipm_iters);
    assert_eq!(st.krylov_iters, st.linalg.krylov_iters);
}

/// Splits the per-step μ history into subproblems.
fn mu_by_subproblem(r: &SolveResult) -> Vec<&[f64]> {
    let mut out = Vec::new();
    let mut start = 0;
    for &n in &r.stats.inner_per_outer {
        out.push(&r.stats.mu_history[start..start + n]);
        start += n;
    }
    out
}

fn mu_increases(r: &SolveResult) -> Vec<(usize, usize, f64, f64)> {
    let mut bad = Vec::new();
    for (k, mus) in mu_by_subproblem(r).iter().enumerate() {
        for (i, w) in mus.windows(2).enumerate() {
            if w[1] > w[0] * (1.0 + 1e-12) {
                bad.push((k, i + 1, w[0], w[1]));
            }
        }
    }
    bad
}

#[test]
fn toys_in_every_mode() {
    for (name, obj) in [("toy-eq", 1.0), ("toy-lp", -8.0), ("toy-qp", -0.25)] {
        let m = builtin(name).unwrap();
        for mode in MODES {
            let tol = 1e-8;
            let r = solve(&m, &SolverOptions::default().with_mode(mode).with_tol(tol)).unwrap();
            let label = format!("{name} {mode}");
            check_optimal(&r, tol, &label);
            check_interior(&r, &m, mode);
            check_bookkeeping(&r);
            assert!(rel_err(r.objective, obj) < 1e-6, "{label}: {}", r.objective);
        }
    }
}

/// The inner method alone on `min x, x = 1, x ≥ 0` with negligible regularization.
#[test]
fn one_variable_toy_converges_fast() {
    let m = builtin("toy-eq").unwrap();
    let p = Problem::new(&m, RegParams::new(1e-10, 1e-10), Formulation::Standard);
    let cfg = InnerConfig::default();
    let mut it = start_point(&p, None, &cfg).unwrap();
    let anchor = it.clone();
    let mut backend = DirectAugmented::new(&p);
    let (steps, ok) = solve_subproblem(&p, &mut it, &anchor, &mut backend, &cfg, 1e-8).unwrap();
    assert!(ok && steps <= 15, "{steps} steps");
    assert!((it.x[0] - 1.0).abs() < 1e-7, "x = {}", it.x[0]);
    assert!(it.mu(&p) <= 1e-8);
}

#[test]
fn planted_problems_reach_the_planted_optimum() {
    for seed in 0..6 {
        for quadratic in [false, true] {
            let pl = planted(seed, 12, 5, quadratic);
            for mode in MODES {
                if mode == Mode::PcgChol && quadratic {
                    continue;
                }
                let tol = 1e-8;
                let r = solve(&pl.model, &with_reg(mode, tol, 1e-6)).unwrap();
                let label = format!("seed {seed} quadratic {quadratic} {mode}");
                check_optimal(&r, tol, &label);
                check_interior(&r, &pl.model, mode);
                check_bookkeeping(&r);
                assert!(rel_err(r.objective, pl.objective) < 1e-6, "{label}: {} vs {}", r.objective, pl.objective);
                if !quadratic {
                    let err = norm2(&r.iterate.x.iter().zip(&pl.x).map(|(a, b)| a - b).collect::<Vec<_>>());
                    assert!(err < 1e-5 * norm2(&pl.x).max(1.0), "{label}: primal error {err}");
                }
            }
        }
    }
}

/// Builds `(x, y, s)` and an anchor `(x_k, y_k)` so the triple is feasible for
/// the regularized pair, then compares the objective gap with `x_Cᵀs`.
#[test]
fn duality_gap_equals_complementarity() {
    let mut r = rng(7);
    for case in 0..200 {
        let quadratic = case % 2 == 1;
        let pl = planted(100 + case, 9, 4, quadratic);
        let m = &pl.model;
        let (d, mm) = (m.d(), m.m());
        let rho = common::log_uniform(&mut r, 1e-4, 1.0);
        let delta = common::log_uniform(&mut r, 1e-4, 1.0);
        let p = Problem::new(m, RegParams::new(rho, delta), Formulation::Standard);
        let x: Vec<f64> = (0..d).map(|_| r.gen_range(0.1..3.0)).collect();
        let y: Vec<f64> = (0..mm).map(|_| r.gen_range(-2.0..2.0)).collect();
        let s: Vec<f64> = (0..d).map(|_| r.gen_range(0.1..3.0)).collect();

        // Dual feasibility fixes x_k, primal feasibility fixes y_k.
        let hx = m.h.matvec(&x).unwrap();
        let aty = m.a.tr_matvec(&y).unwrap();
        let xk: Vec<f64> = (0..d).map(|j| x[j] + (hx[j] + m.g[j] - aty[j] - s[j]) / rho).collect();
        let ax = m.a.matvec(&x).unwrap();
        let yk: Vec<f64> = (0..mm).map(|i| y[i] + (ax[i] - m.b[i]) / delta).collect();

        let it = Iterate {
            x: x.clone(),
            z: vec![],
            y: y.clone(),
            y2: vec![],
            s: s.clone(),
        };
        let anchor = Iterate {
            x: xk.clone(),
            y: yk.clone(),
            ..it.clone()
        };
        let rhs = newton_rhs(&p, &it, &anchor, 0.0);
        let scale = 1.0 + norm2(&xk) + norm2(&yk);
        assert!(norm2(&rhs.rd) <= 1e-10 * scale, "case {case}: dual infeasible");
        assert!(norm2(&rhs.rp) <= 1e-10 * scale, "case {case}: primal infeasible");

        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
        let sq = |v: &[f64]| dot(v, v);
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u - v).collect::<Vec<f64>>();
        let xhx = dot(&x, &hx);
        let primal = 0.5 * xhx + dot(&m.g, &x) + 0.5 * rho * sq(&diff(&x, &xk)) + 0.5 * delta * sq(&y);
        let dual = dot(&y, &m.b) - 0.5 * xhx - 0.5 * rho * sq(&x) - 0.5 * delta * sq(&diff(&y, &yk))
            + 0.5 * rho * sq(&xk)
            + 0.5 * delta * sq(&yk);
        let comp = -rhs.rc.iter().sum::<f64>();
        assert!((comp - dot(&x, &s)).abs() < 1e-12 * comp);
        let gap = primal - dual;
        let mag = primal.abs() + dual.abs() + comp;
        assert!((gap - comp).abs() <= 1e-8 * mag, "case {case}: gap {gap} vs {comp}");
    }
}

#[test]
fn anchors_approach_the_toy_solution() {
    let m = builtin("toy-eq").unwrap();
    let run = |reg: f64, max_ppm: usize| {
        let opts = SolverOptions {
            max_ppm,
            stop_rule: StopRule::Exact { tol: 1e-12 },
            ..with_reg(Mode::Direct, 1e-14, reg)
        };
        solve(&m, &opts).unwrap()
    };
    // Distance of (x, y) to the primal-dual solution (1, 1).
    let dist = |r: &SolveResult| (r.iterate.x[0] - 1.0).hypot(r.iterate.y[0] - 1.0);
    // Subproblems solved to 1e-12 place each anchor within about 1e-12/ρ.
    let noise = 1e-12 / 1e-2;
    let d: Vec<f64> = (1..=8).map(|k| dist(&run(1e-2, k))).collect();
    for w in d.windows(2) {
        assert!(w[1] <= w[0] + noise, "{d:?}");
    }
    assert!(d[0] > 100.0 * noise && d[7] < 1e-3 * d[0], "{d:?}");
    let res = &run(1e-2, 8).stats.anchor_residuals;
    assert!(res.windows(2).all(|w| w[1] <= w[0] + noise), "{res:?}");

    let slow = dist(&run(1e-2, 3));
    let fast = dist(&run(1e-6, 3));
    assert!(slow >= fast, "rho 1e-2: {slow}, rho 1e-6: {fast}");
}

/// Under the norm-based ρ the proximal iterates drift slowly on problems
/// where the objective is nearly flat along a feasible direction (kb2, sc50a,
/// sc50b, sc105, israel, lotfi and scagr7 hit the outer limit), so the
/// default path is checked on the problems where it converges.
#[test]
fn netlib_regression_with_default_settings() {
    for (name, reference) in CORPUS.into_iter().filter(|(n, _)| *n != "sc50a") {
        let m = netlib(name);
        let tol = 1e-5;
        let r = solve(&m, &SolverOptions::default().with_tol(tol)).unwrap();
        eprintln!(
            "{name}: {:?} ppm {} ipm {} obj {:.8e} rho {:.2e}",
            r.status, r.stats.ppm_iters, r.stats.ipm_iters, r.objective, r.reg.rho
        );
        check_optimal(&r, tol, name);
        check_interior(&r, &m, Mode::Direct);
        check_bookkeeping(&r);
        assert!(rel_err(r.objective, reference) < 1e-4, "{name}: {} vs {reference}", r.objective);
    }
}

#[test]
fn netlib_regression_with_fixed_regularization() {
    for (name, reference) in CORPUS {
        let m = netlib(name);
        let tol = 1e-5;
        let r = solve(&m, &with_reg(Mode::Direct, tol, 7e-8)).unwrap();
        check_optimal(&r, tol, name);
        check_interior(&r, &m, Mode::Direct);
        check_bookkeeping(&r);
        assert!(rel_err(r.objective, reference) < 1e-4, "{name}: {} vs {reference}", r.objective);
    }
}

#[test]
fn netlib_iterative_modes() {
    for (name, reference) in CORPUS {
        let m = netlib(name);
        for mode in [Mode::GmresLdl, Mode::PcgChol] {
            let tol = 1e-5;
            let r = solve(&m, &with_reg(mode, tol, 7e-8)).unwrap();
            eprintln!(
                "{name} {mode}: {:?} ppm {} ipm {} krylov {} fact {} obj {:.8e}",
                r.status,
                r.stats.ppm_iters,
                r.stats.ipm_iters,
                r.stats.krylov_iters,
                r.stats.factorizations,
                r.objective
            );
            let label = format!("{name} {mode}");
            check_optimal(&r, tol, &label);
            check_bookkeeping(&r);
            assert!(r.stats.factorizations <= r.stats.ipm_iters);
            assert!(rel_err(r.objective, reference) < 1e-4, "{label}: {}", r.objective);
        }
    }
}

/// Every accepted step must not raise μ within its subproblem. Warm starts
/// between subproblems may raise it and are not steps.
#[test]
fn mu_never_increases_within_a_subproblem() {
    let mut violations = Vec::new();
    for (name, _) in CORPUS {
        let m = netlib(name);
        for mode in [Mode::Direct, Mode::GmresLdl] {
            let r = solve(&m, &with_reg(mode, 1e-5, 7e-8)).unwrap();
            for v in mu_increases(&r) {
                eprintln!("{name} {mode}: subproblem {} step {}: mu {:.3e} -> {:.3e}", v.0, v.1, v.2, v.3);
                violations.push((name, mode, v));
            }
        }
    }
    assert!(violations.is_empty(), "{} increases of mu", violations.len());
}

/// Outer residuals at the anchors trend down after the first three. Changes
/// below 1e-8 relative are rounding on a plateau, not increases.
#[test]
fn anchor_residuals_trend_down() {
    for (name, _) in CORPUS {
        let m = netlib(name);
        let r = solve(&m, &with_reg(Mode::Direct, 1e-5, 7e-8)).unwrap();
        let res = &r.stats.anchor_residuals;
        let tail = res.get(3..).unwrap_or(&[]);
        let ups = tail.windows(2).filter(|w| w[1] > w[0] * (1.0 + 1e-8)).count();
        let allowed = (tail.len().saturating_sub(1) as f64 * 0.1).floor() as usize;
        eprintln!("{name}: {ups} increases over {} anchors", tail.len());
        assert!(ups <= allowed, "{name}: {ups} increases, {allowed} allowed: {res:?}");
    }
}

/// Warm-started subproblems need few steps once the outer loop settles.
#[test]
fn warm_starts_are_cheap_late_in_the_run() {
    let mut violations = Vec::new();
    for (name, _) in CORPUS {
        let m = netlib(name);
        let r = solve(&m, &with_reg(Mode::Direct, 1e-5, 7e-8)).unwrap();
        assert_eq!(r.status, Status::Optimal, "{name}");
        let per = &r.stats.inner_per_outer;
        eprintln!("{name}: inner steps per outer {per:?}");
        if per[per.len() / 2..].iter().any(|&n| n > 3) {
            violations.push(name);
        }
    }
    assert!(violations.is_empty(), "more than 3 late inner steps: {violations:?}");
}
