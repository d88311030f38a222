use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use energy_vi::Error;
use energy_vi::problems::{ProblemKind, ProblemSpec, REGISTRY, parse_case};
use energy_vi::solvers::{DEFAULT_TOL, SolverKind};
use energy_vi::study::{
    LevelSolution, SolveOptions, check_against_oracle, check_levels, largest_oracle_level, run_study_keeping_finest,
    solve_case, write_fields, write_outputs, write_residual_history,
};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NONCONVERGENCE: u8 = 3;

/// Finite element solvers for state-constrained elliptic optimal control.
#[derive(Parser, Debug)]
#[command(name = "energy-vi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one case on one mesh level.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        level: u32,
    },
    /// Convergence study against a reference solution.
    Study {
        #[command(flatten)]
        common: Common,
        /// Inclusive range `A..B`, or a single level.
        #[arg(long, value_parser = parse_levels)]
        levels: Levels,
        /// Reference level (default: finest study level + 1).
        #[arg(long = "ref")]
        ref_level: Option<u32>,
    },
    /// Compare projection gradient with the exhaustive oracle.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Defaults to the finest level the oracle can handle.
        #[arg(long)]
        level: Option<u32>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Case label `kind:case`, e.g. `distributed:2`.
    #[arg(long)]
    problem: String,
    /// pg, pdhg, ssn or ipm (default: pg, or ssn for gradient constraints).
    #[arg(long)]
    solver: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    max_iter: Option<usize>,
    /// PDHG primal proximal weight.
    #[arg(long)]
    pdhg_gamma: Option<f64>,
    /// PDHG dual proximal weight.
    #[arg(long)]
    pdhg_s: Option<f64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Write `state.csv` and `control.csv`.
    #[arg(long)]
    dump_fields: bool,
    /// Write `residual_history.csv`.
    #[arg(long)]
    residual_history: bool,
}

#[derive(Debug, Clone)]
struct Levels(Vec<u32>);

fn parse_levels(s: &str) -> Result<Levels, String> {
    let num = |t: &str| t.trim().parse::<u32>().map_err(|_| format!("bad level `{t}`"));
    let levels: Vec<u32> = match s.split_once("..") {
        Some((a, b)) => {
            let b = b.strip_prefix('=').unwrap_or(b);
            (num(a)?..=num(b)?).collect()
        }
        None => vec![num(s)?],
    };
    if levels.is_empty() {
        return Err(format!("empty level range `{s}`"));
    }
    Ok(Levels(levels))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            match &e {
                Error::UnknownCase(label, _) => {
                    eprintln!("error: unknown case `{label}`");
                    eprintln!("usage: energy-vi <solve|study|verify> --problem <kind:case> ...");
                    eprintln!("registered cases: {}", REGISTRY.join(", "));
                }
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        _ if e.is_convergence_failure() => EXIT_NONCONVERGENCE,
        Error::UnknownCase(..) | Error::InvalidArgument(_) | Error::Unsupported(_) | Error::LevelOutOfRange { .. } => {
            EXIT_USAGE
        }
        _ => EXIT_FAILURE,
    }
}

fn options(spec: &ProblemSpec, common: &Common) -> energy_vi::Result<SolveOptions> {
    let solver = match &common.solver {
        Some(name) => SolverKind::from_name(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown solver `{name}` (pg, pdhg, ssn, ipm)")))?,
        None => energy_vi::study::default_solver(spec.kind),
    };
    let mut opts = SolveOptions::new(solver);
    opts.cfg.tol = common.tol;
    if let Some(m) = common.max_iter {
        opts.cfg.max_iter = m;
    }
    opts.cfg.pdhg_prox_y = common.pdhg_gamma;
    opts.cfg.pdhg_prox_p = common.pdhg_s;
    opts.cfg.validate()?;
    Ok(opts)
}

fn run(cli: Cli) -> energy_vi::Result<u8> {
    match cli.command {
        Command::Solve { common, level } => {
            let spec = parse_case(&common.problem)?;
            let opts = options(&spec, &common)?;
            let sol = solve_case(&spec, level, &opts)?;
            print_solution(&spec, &sol);
            dump(&common, &sol)?;
            Ok(0)
        }
        Command::Study {
            common,
            levels,
            ref_level,
        } => {
            let spec = parse_case(&common.problem)?;
            let opts = options(&spec, &common)?;
            let ref_level = ref_level.unwrap_or(*levels.0.last().expect("nonempty") + 1);
            check_levels(&levels.0, Some(ref_level))?;
            match run_study_keeping_finest(&spec, &levels.0, ref_level, &opts) {
                Ok((table, finest)) => {
                    print!("{table}");
                    write_outputs(&table, None, &common.out)?;
                    dump(&common, &finest)?;
                    Ok(0)
                }
                Err(e) => {
                    if !e.partial.rows.is_empty() {
                        print!("{}", e.partial);
                        write_outputs(&e.partial, None, &common.out)?;
                    }
                    Err(e.into())
                }
            }
        }
        Command::Verify { common, level } => {
            let spec = parse_case(&common.problem)?;
            if spec.kind == ProblemKind::GradientConstrained {
                return verify_gradient(&spec, &common, level.unwrap_or(3));
            }
            let opts = options(&spec, &common)?;
            let level = match level {
                Some(l) => l,
                None => largest_oracle_level(&spec)?,
            };
            let check = check_against_oracle(&spec, level, &opts.cfg)?;
            println!("{check}");
            let ok = check.passes(1e-6, 10.0 * common.tol);
            println!("{}", if ok { "agreement: ok" } else { "agreement: FAILED" });
            Ok(if ok { 0 } else { EXIT_FAILURE })
        }
    }
}

/// Gradient constraints have no box oracle; check the constraint violation
/// at the end of the penalty schedule instead.
fn verify_gradient(spec: &ProblemSpec, common: &Common, level: u32) -> energy_vi::Result<u8> {
    let opts = options(spec, common)?;
    let sol = solve_case(spec, level, &opts)?;
    let violation = sol.gradient_violation.unwrap_or(0.0);
    println!("{} level {}: gradient violation {violation:.3e}", spec.label(), level);
    let ok = violation <= 1e-2;
    println!("{}", if ok { "constraint: ok" } else { "constraint: FAILED" });
    Ok(if ok { 0 } else { EXIT_FAILURE })
}

fn print_solution(spec: &ProblemSpec, sol: &LevelSolution) {
    println!("{} level {} ({} dofs)", spec.label(), sol.level, sol.dofs());
    println!("  iterations       {}", sol.bundle.iterations);
    println!("  final residual   {:.3e}", sol.bundle.final_residual);
    println!("  max state        {:.6e}", sol.bundle.y_h.max());
    if let Some(v) = sol.gradient_violation {
        println!("  gradient excess  {v:.3e}");
    }
}

fn dump(common: &Common, sol: &LevelSolution) -> energy_vi::Result<()> {
    if common.dump_fields {
        write_fields(sol, &common.out)?;
    }
    if common.residual_history {
        write_residual_history(&sol.history, &Path::new(&common.out).join("residual_history.csv"))?;
    }
    Ok(())
}
