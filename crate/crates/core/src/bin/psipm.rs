use std::fs::File;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use psipm::bench::{self, SolveReport};
use psipm::{Mode, RegParams, SolverOptions};

#[derive(Parser)]
#[command(name = "psipm", version, about = "Proximal-point interior point solver for convex LP/QP")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one MPS/QPS file (or `builtin:<toy>`).
    Solve {
        path: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Solve every problem listed in a manifest CSV.
    Suite {
        manifest: PathBuf,
        #[command(flatten)]
        flags: Flags,
        /// Extra modes to compare against in the performance profiles.
        #[arg(long = "compare", value_enum)]
        compare: Vec<CliMode>,
        /// Directory for performance-profile data files.
        #[arg(long)]
        profile_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Direct,
    GmresLdl,
    PcgChol,
    SlackDirect,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Mode {
        match m {
            CliMode::Direct => Mode::Direct,
            CliMode::GmresLdl => Mode::GmresLdl,
            CliMode::PcgChol => Mode::PcgChol,
            CliMode::SlackDirect => Mode::SlackDirect,
        }
    }
}

#[derive(Args)]
struct Flags {
    #[arg(long, value_enum, default_value = "direct")]
    mode: CliMode,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Multiplier f on the regularization parameter.
    #[arg(long, default_value_t = 1.0)]
    reg_scale: f64,
    /// Fixed value for both regularization parameters, bypassing the norm-based rule.
    #[arg(long)]
    reg: Option<f64>,
    #[arg(long, default_value_t = 0.7)]
    sigma_r: f64,
    #[arg(long, default_value_t = 200)]
    max_ppm: usize,
    #[arg(long, default_value_t = 100)]
    max_ipm: usize,
    /// Krylov iterations per solve (default 100 for GMRES, 200 for PCG).
    #[arg(long)]
    krylov_budget: Option<usize>,
    #[arg(long, default_value_t = 0.51)]
    refresh_frac: f64,
    /// Accepted for reproducible scripts; the solver is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report table here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl Flags {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            mode: self.mode.into(),
            tol: self.tol,
            reg_scale: self.reg_scale,
            reg: self.reg.map(|r| RegParams::new(r, r)),
            sigma_r: self.sigma_r,
            max_ppm: self.max_ppm,
            max_ipm: self.max_ipm,
            krylov_budget: self.krylov_budget,
            refresh_frac: self.refresh_frac,
            ..SolverOptions::default()
        }
    }
}

fn emit(reports: &[SolveReport], csv: &Option<PathBuf>) -> Result<()> {
    match csv {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            bench::write_csv(reports, f)?;
        }
        None => bench::write_csv(reports, io::stdout().lock())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Solve { path, flags } => {
            if flags.tol <= 0.0 {
                bail!("--tol must be positive");
            }
            let r = bench::run_problem(&path, &flags.options());
            log::info!(
                "{}: {} objective {:.8e} after {} outer / {} inner iterations",
                r.problem,
                r.status,
                r.objective,
                r.ppm_iters,
                r.ipm_iters
            );
            emit(std::slice::from_ref(&r), &flags.csv)?;
            Ok(r.is_optimal())
        }
        Cmd::Suite {
            manifest,
            flags,
            compare,
            profile_dir,
            jobs,
        } => {
            let opts = flags.options();
            let reports = bench::run_suite(&manifest, &opts, jobs)?;
            emit(&reports, &flags.csv)?;
            let ok = reports.iter().all(SolveReport::is_optimal);
            if let Some(dir) = profile_dir {
                let mut runs = vec![(opts.mode.to_string(), reports)];
                for m in compare {
                    let o = SolverOptions {
                        mode: m.into(),
                        ..opts.clone()
                    };
                    runs.push((o.mode.to_string(), bench::run_suite(&manifest, &o, jobs)?));
                }
                for p in bench::write_profiles(&dir, &runs)? {
                    log::info!("wrote {}", p.display());
                }
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
