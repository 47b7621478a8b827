//! Command-line driver: solve and audit the built-in problems, run
//! refinement sweeps, re-audit stored runs, and run the verification suite.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on computation faults.
//! Maximum-principle and non-negativity failures are findings, not faults;
//! they never change the exit code unless `--expect-nonneg` is passed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmpfem::analysis::{DmpReport, SweepMode, Verdict};
use dmpfem::assembly::Formulation;
use dmpfem::problem::catalog;
use dmpfem::run::{run_audit, run_solve, run_sweep, verify_all, RunConfig};
use dmpfem::{Error, Parallelism};

#[derive(Parser)]
#[command(
    name = "dmpfem",
    about = "Spectral/hp solver and maximum-principle audit harness for steady \
             diffusion with decay",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in problems.
    ListProblems,
    /// Solve one problem, scan and audit it, and write the artifact set.
    Solve(SolveArgs),
    /// Run a p- or h-refinement sweep and write the minimum table.
    Sweep(SweepArgs),
    /// Re-run the extrema scan and audit on a stored run directory.
    Audit(AuditArgs),
    /// Run the cross-module verification suite.
    Verify(JobsArg),
}

#[derive(Args, Default)]
struct ProblemArgs {
    /// Problem name; see `list-problems`.
    #[arg(long, conflicts_with = "config")]
    problem: Option<String>,
    /// JSON run configuration to start from; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Discretization: single-field (alias: galerkin), ls1, or ls2.
    #[arg(long)]
    formulation: Option<String>,
    /// Polynomial order.
    #[arg(long)]
    p: Option<usize>,
    /// Interval mesh: number of elements.
    #[arg(long)]
    ne: Option<usize>,
    /// Rectangle mesh: subdivisions per direction.
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    /// Hole mesh: refinement parameter.
    #[arg(long)]
    hole_n: Option<usize>,
    /// Jitter the mesh vertices (fraction of local element size, < 0.5).
    #[arg(long)]
    jitter_amplitude: Option<f64>,
    /// Jitter seed (implies jittering with amplitude 0.2 if none given).
    #[arg(long)]
    jitter_seed: Option<u64>,
    /// Hole-problem diffusivities.
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    k2: Option<f64>,
    /// Quadrature points per direction (default: order-dependent policy).
    #[arg(long)]
    ngp: Option<usize>,
    /// Extrema-scan density per direction (default 16, floored at p + 1).
    #[arg(long)]
    density: Option<usize>,
    /// Output directory (default: ./out/<problem>-<formulation>-p<p>, or
    /// DMPFEM_OUT as the root).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Also write the constrained system in coordinate form.
    #[arg(long)]
    dump_matrix: bool,
    /// Exit with a fault when the non-negativity verdict fails.
    #[arg(long)]
    expect_nonneg: bool,
    #[command(flatten)]
    jobs: JobsArg,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Refinement mode: p (order on the fixed mesh) or h (mesh splitting at
    /// fixed order, set by --p, default 1).
    #[arg(long)]
    mode: Option<String>,
    /// Levels, e.g. `1..10` (inclusive) or `1,2,4,8`.
    #[arg(long)]
    levels: Option<String>,
    #[command(flatten)]
    jobs: JobsArg,
}

#[derive(Args)]
struct AuditArgs {
    /// Run directory containing config.json and solution.json.
    #[arg(long)]
    dir: PathBuf,
    /// Scan density override.
    #[arg(long)]
    density: Option<usize>,
    #[command(flatten)]
    jobs: JobsArg,
}

#[derive(Args, Default)]
struct JobsArg {
    /// Bound the worker thread count (results do not depend on it).
    #[arg(long)]
    jobs: Option<usize>,
}

fn parallelism(jobs: &JobsArg) -> Parallelism {
    #[cfg(feature = "parallel")]
    if let Some(n) = jobs.jobs {
        if n <= 1 {
            return Parallelism::Sequential;
        }
        // A second initialization attempt in the same process is harmless;
        // the pool keeps its original size.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
    Parallelism::default()
}

/// Builds the effective run configuration: `--config` as the base when
/// given, explicit flags on top.
fn build_config(args: &ProblemArgs) -> Result<RunConfig, Error> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str::<RunConfig>(&text).map_err(|e| Error::Parse {
                path: path.clone(),
                what: e.to_string(),
            })?
        }
        None => {
            let name = args.problem.as_deref().ok_or_else(|| {
                Error::InvalidArgument("pass --problem or --config".into())
            })?;
            RunConfig::for_problem(name)
        }
    };
    if let Some(name) = &args.problem {
        config.problem = name.clone();
    }
    if let Some(f) = &args.formulation {
        config.formulation = f.parse::<Formulation>()?;
    }
    if let Some(p) = args.p {
        config.p = p;
    }
    macro_rules! take {
        ($($field:ident),*) => {
            $(if args.$field.is_some() { config.$field = args.$field; })*
        };
    }
    take!(ne, nx, ny, hole_n, jitter_amplitude, jitter_seed, k1, k2, ngp);
    if let Some(d) = args.density {
        config.density = d;
    }
    if let Some(out) = &args.out {
        config.out = Some(out.clone());
    }
    Ok(config)
}

fn parse_levels(text: &str) -> Result<Vec<usize>, Error> {
    let bad = || Error::InvalidArgument(format!("cannot parse levels `{text}`"));
    if let Some((a, b)) = text.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}

fn print_report(dmp: &DmpReport) {
    println!(
        "min  {:+.6e} at ({}, {})",
        dmp.min_value, dmp.min_location[0], dmp.min_location[1]
    );
    println!(
        "max  {:+.6e} at ({}, {})",
        dmp.max_value, dmp.max_location[0], dmp.max_location[1]
    );
    println!(
        "boundary range [{:+.6e}, {:+.6e}]",
        dmp.boundary_min, dmp.boundary_max
    );
    println!(
        "negative fraction {:.4} (density {})",
        dmp.negative_fraction, dmp.eval_density
    );
    println!(
        "verdicts: nonneg={} mp-diffusion={} mp-decay={}",
        dmp.verdicts.nonneg_ok, dmp.verdicts.mp_diffusion_ok, dmp.verdicts.mp_decay_ok
    );
}

fn dispatch(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::ListProblems => {
            for (name, about) in catalog() {
                println!("{name:12} {about}");
            }
            Ok(true)
        }
        Command::Solve(args) => {
            let par = parallelism(&args.jobs);
            let mut config = build_config(&args.problem)?;
            config.dump_matrix |= args.dump_matrix;
            config.expect_nonneg |= args.expect_nonneg;
            let (report, _, dir) = run_solve(&config, par)?;
            println!(
                "{} {} p={} ({} elements, {} nodes)",
                report.problem,
                report.formulation,
                report.p,
                report.mesh.n_elements,
                report.mesh.n_nodes
            );
            println!(
                "solve: {} n={} iterations={} residual={:.3e}",
                report.solve.method,
                report.solve.n,
                report.solve.iterations,
                report.solve.relative_residual
            );
            print_report(&report.dmp);
            println!("artifacts: {}", dir.display());
            if config.expect_nonneg && report.dmp.verdicts.nonneg_ok == Verdict::Fail {
                eprintln!(
                    "non-negativity failed: min {:+.6e} at ({}, {})",
                    report.dmp.min_value,
                    report.dmp.min_location[0],
                    report.dmp.min_location[1]
                );
                return Ok(false);
            }
            Ok(true)
        }
        Command::Sweep(args) => {
            let par = parallelism(&args.jobs);
            let mut config = build_config(&args.problem)?;
            if args.problem.p.is_none() && args.problem.config.is_none() {
                // h-sweeps default to first order; p-sweeps ignore this.
                config.p = 1;
            }
            if let Some(mode) = &args.mode {
                config.mode = Some(match mode.as_str() {
                    "p" => SweepMode::P,
                    "h" => SweepMode::H,
                    other => {
                        return Err(Error::InvalidArgument(format!(
                            "unknown sweep mode `{other}` (use p or h)"
                        )))
                    }
                });
            }
            if let Some(levels) = &args.levels {
                config.levels = parse_levels(levels)?;
            }
            let (table, dir) = run_sweep(&config, par)?;
            println!(
                "{} {} {}-sweep, {} rows",
                table.problem,
                table.formulation,
                table.mode,
                table.rows.len()
            );
            for row in &table.rows {
                println!(
                    "level {:3}  min {:+.6e} at ({}, {})",
                    row.level, row.min_concentration, row.min_x, row.min_y
                );
            }
            println!("artifacts: {}", dir.display());
            if let Some(reason) = &table.aborted {
                eprintln!("sweep aborted: {reason}");
                return Ok(false);
            }
            Ok(true)
        }
        Command::Audit(args) => {
            let par = parallelism(&args.jobs);
            let dmp = run_audit(&args.dir, args.density, par)?;
            print_report(&dmp);
            Ok(true)
        }
        Command::Verify(jobs) => {
            let par = parallelism(&jobs);
            let outcomes = verify_all(par);
            let mut all_ok = true;
            for o in &outcomes {
                println!(
                    "{} {:24} {}",
                    if o.passed { "ok  " } else { "FAIL" },
                    o.name,
                    o.detail
                );
                all_ok &= o.passed;
            }
            Ok(all_ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
