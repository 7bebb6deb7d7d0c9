//! Command-line front end: `solve`, `assign`, `verify` and `enumerate`.
//!
//! Exit codes: 0 success, 1 parse or usage error, 2 resolve error,
//! 3 unsatisfiable, 4 timeout, 5 uneven partition, 6 verification failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::assign::{self, Policy};
use crate::constraints::{NestMode, ResolvedDesign};
use crate::error::{AssignError, SolveError};
use crate::solver::{self, SolveOptions};
use crate::verify;
use crate::{dsl, resolve_program, Program};

pub const EXIT_PARSE: i32 = 1;
pub const EXIT_RESOLVE: i32 = 2;
pub const EXIT_UNSATISFIABLE: i32 = 3;
pub const EXIT_TIMEOUT: i32 = 4;
pub const EXIT_UNEVEN: i32 = 5;
pub const EXIT_VERIFY: i32 = 6;

pub const TIMEOUT_ENV: &str = "PLANET_TIMEOUT_SECS";

#[derive(Debug, Parser)]
#[command(name = "expdesign", version, about = "Solve, assign and verify experimental plan matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the plan table for the assigned design.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Defaults to the program's assign seed, then 0.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomly assign units to plans.
    Assign {
        #[command(flatten)]
        common: Common,
        /// Required unless the program's assign statement gives a seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the plan table (defaults to plans.csv next to --out).
        #[arg(long)]
        plans_out: Option<PathBuf>,
        #[arg(long, default_value = "strict")]
        policy: Policy,
    },
    /// Check a plan table against a design and print a JSON report.
    Verify {
        plans: PathBuf,
        spec: PathBuf,
        #[arg(long, default_value = "kron")]
        nest_mode: NestMode,
    },
    /// List every plan matrix of a small design.
    Enumerate {
        spec: PathBuf,
        #[arg(long)]
        count_only: bool,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value = "kron")]
        nest_mode: NestMode,
    },
}

#[derive(Debug, Args)]
struct Common {
    spec: PathBuf,
    #[arg(long, default_value = "kron")]
    nest_mode: NestMode,
    /// Search budget in seconds (overridden by PLANET_TIMEOUT_SECS).
    #[arg(long)]
    timeout: Option<u64>,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

type Outcome = Result<(), Failure>;

/// Runs the CLI with explicit streams; returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_PARSE } else { 0 };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
            } else {
                let _ = write!(stdout, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Solve { common, seed, out } => cmd_solve(&common, seed, out.as_deref(), stdout),
        Command::Assign {
            common,
            seed,
            out,
            plans_out,
            policy,
        } => cmd_assign(&common, seed, out.as_deref(), plans_out.as_deref(), policy, stdout, stderr),
        Command::Verify { plans, spec, nest_mode } => cmd_verify(&plans, &spec, nest_mode, stdout),
        Command::Enumerate {
            spec,
            count_only,
            limit,
            nest_mode,
        } => cmd_enumerate(&spec, count_only, limit, nest_mode, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(stderr, "{}", f.message);
            f.code
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::new(EXIT_PARSE, format!("error: cannot read {}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Outcome {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| Failure::new(EXIT_PARSE, format!("error: cannot write {}: {e}", p.display()))),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Failure::new(EXIT_PARSE, format!("error: {e}"))),
    }
}

fn load(spec: &Path, nest_mode: NestMode) -> Result<(Program, ResolvedDesign), Failure> {
    let source = read(spec)?;
    let program = dsl::parse(&source).map_err(|e| Failure::new(EXIT_PARSE, format!("error[{}]: {e}", e.kind.code())))?;
    let rd = resolve_program(&program, nest_mode)
        .map_err(|e| Failure::new(EXIT_RESOLVE, format!("error[{}]: {e}", e.code())))?;
    Ok((program, rd))
}

fn timeout(flag: Option<u64>) -> Result<Duration, Failure> {
    if let Ok(v) = std::env::var(TIMEOUT_ENV) {
        let secs: u64 = v
            .trim()
            .parse()
            .map_err(|_| Failure::new(EXIT_PARSE, format!("error: {TIMEOUT_ENV}={v} is not a number of seconds")))?;
        return Ok(Duration::from_secs(secs));
    }
    Ok(flag.map_or(solver::DEFAULT_TIMEOUT, Duration::from_secs))
}

fn solve_failure(e: SolveError) -> Failure {
    match e {
        SolveError::Timeout(_) => Failure::new(EXIT_TIMEOUT, format!("error[Timeout]: {e}")),
        SolveError::DesignTooLarge { .. } => Failure::new(EXIT_RESOLVE, format!("error[DesignTooLarge]: {e}")),
        _ => Failure::new(EXIT_UNSATISFIABLE, format!("error[Unsatisfiable]: {e}")),
    }
}

fn solved(common: &Common, seed: u64) -> Result<(Program, crate::PlanMatrix), Failure> {
    let (program, rd) = load(&common.spec, common.nest_mode)?;
    let options = SolveOptions {
        timeout: timeout(common.timeout)?,
    };
    let m = solver::solve_with(&rd, seed, options).map_err(solve_failure)?;
    Ok((program, m))
}

fn declared_seed(spec: &Path) -> Result<Option<u64>, Failure> {
    Ok(dsl::parse(&read(spec)?).ok().and_then(|p| p.assign.seed))
}

fn cmd_solve(common: &Common, seed: Option<u64>, out: Option<&Path>, stdout: &mut dyn Write) -> Outcome {
    let seed = match seed {
        Some(s) => s,
        None => declared_seed(&common.spec)?.unwrap_or(0),
    };
    let (program, m) = solved(common, seed)?;
    let csv = assign::plans_csv(&m, &program.variables).map_err(|e| Failure::new(EXIT_RESOLVE, format!("error: {e}")))?;
    write_output(out, &csv, stdout)
}

fn cmd_assign(
    common: &Common,
    seed: Option<u64>,
    out: Option<&Path>,
    plans_out: Option<&Path>,
    policy: Policy,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Outcome {
    let seed = match seed {
        Some(s) => Some(s),
        None => declared_seed(&common.spec)?,
    };
    let seed = seed.ok_or_else(|| {
        Failure::new(
            EXIT_PARSE,
            "error: --seed is required (or give one in the program: `assign units to design seed N`)",
        )
    })?;
    let (program, m) = solved(common, seed)?;
    let units = assign::build_units(program.assigned_units()).map_err(|e| Failure::new(EXIT_RESOLVE, format!("error: {e}")))?;
    let table = assign::match_units(&units, &m, seed, policy).map_err(|e| match e {
        AssignError::UnevenPartition { .. } => Failure::new(
            EXIT_UNEVEN,
            format!("error[UnevenPartition]: {e}; use --policy allow-uneven to accept an unbalanced assignment"),
        ),
        _ => Failure::new(EXIT_RESOLVE, format!("error: {e}")),
    })?;
    for w in &table.warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    let plans = assign::plans_csv(&m, &program.variables).map_err(|e| Failure::new(EXIT_RESOLVE, format!("error: {e}")))?;
    let plans_path = plans_out
        .map(Path::to_path_buf)
        .or_else(|| out.map(|o| o.with_file_name("plans.csv")));
    if let Some(p) = plans_path {
        write_output(Some(&p), &plans, stdout)?;
    }
    write_output(out, &assign::assignment_csv(&table), stdout)
}

fn cmd_verify(plans: &Path, spec: &Path, nest_mode: NestMode, stdout: &mut dyn Write) -> Outcome {
    let (program, rd) = load(spec, nest_mode)?;
    let text = read(plans)?;
    let m = assign::read_plans_csv(&text, &rd.variables, &program.variables)
        .map_err(|e| Failure::new(EXIT_VERIFY, format!("error[InvalidTable]: {e}")))?;
    // a table may carry a different number of plans than the default sizing (e.g. one per unit)
    let rd = crate::resolve_for_table(&program, nest_mode, m.plans())
        .map_err(|e| Failure::new(EXIT_RESOLVE, format!("error[{}]: {e}", e.code())))?;
    let report = verify::design_report(&m, &rd).map_err(|e| Failure::new(EXIT_VERIFY, format!("error[{e}]")))?;
    write_output(None, &(report.to_json() + "\n"), stdout)?;
    if report.passed() {
        Ok(())
    } else {
        let first = report.failures().next().expect("a failing check");
        let at = first
            .first_violation
            .map_or(String::new(), |c| format!(" at row {}, column {}", c.row, c.col));
        Err(Failure::new(
            EXIT_VERIFY,
            format!("verification failed: {} on {}{at}", first.name, first.variable),
        ))
    }
}

fn cmd_enumerate(
    spec: &Path,
    count_only: bool,
    limit: Option<usize>,
    nest_mode: NestMode,
    stdout: &mut dyn Write,
) -> Outcome {
    let (program, rd) = load(spec, nest_mode)?;
    let matrices = solver::enumerate(&rd, limit).map_err(solve_failure)?;
    let io = |e: std::io::Error| Failure::new(EXIT_PARSE, format!("error: {e}"));
    if count_only {
        writeln!(stdout, "{}", matrices.count_all()).map_err(io)?;
        return Ok(());
    }
    for m in matrices {
        let table = assign::emit_plan_table(&m, &program.variables).map_err(|e| Failure::new(EXIT_RESOLVE, e.to_string()))?;
        let rows: Vec<&[String]> = table.iter().map(|r| &r[1..]).collect();
        writeln!(stdout, "{}", serde_json::to_string(&rows).expect("strings serialize")).map_err(io)?;
    }
    Ok(())
}
