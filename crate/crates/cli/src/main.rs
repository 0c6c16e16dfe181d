use acr_cli::config::{Format, Mode, Precision, RhsKind, RunConfig};
use acr_cli::report::{self, Outcome, SweepPoint};
use acr_cli::run::{self, CliError};
use acr_core::discretize::ProblemKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "acr", version, about = "Cyclic reduction with hierarchical-matrix blocks for 3D elliptic problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the block system as Matrix Market files.
    Generate {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Destination directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Factor and report per-level storage, ranks and timings.
    Factor {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_enum, default_value = "acr")]
        mode: FactorMode,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Factor and solve directly or by iterative refinement.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_enum, default_value = "acr")]
        mode: SolveMode,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Conjugate gradients preconditioned by the factorization.
    Pcg {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Sweep one parameter and emit one record per value.
    Bench {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_enum, default_value = "acr")]
        mode: Mode,
        /// `param=v1,v2,...`
        #[arg(long)]
        sweep: String,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FactorMode {
    Acr,
    CrDense,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolveMode {
    Acr,
    CrDense,
    Refine,
}

#[derive(Args)]
struct ProblemArgs {
    #[arg(long, default_value = "poisson")]
    problem: ProblemKind,
    /// Interior points per direction.
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Convection strength (convdiff).
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Vortex frequency (convdiff).
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    /// Wavenumber (helmholtz).
    #[arg(long)]
    kappa: Option<f64>,
    /// Points per wavelength (helmholtz); overrides --kappa.
    #[arg(long)]
    ppw: Option<f64>,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
}

#[derive(Args)]
struct SolverArgs {
    /// Block directory written by `generate`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Relative truncation tolerance.
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    /// Admissibility parameter.
    #[arg(long, default_value_t = 2.0)]
    eta: f64,
    /// Cluster leaf size.
    #[arg(long, default_value_t = 32)]
    leaf: usize,
    #[arg(long, env = "ACR_WORKERS", default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "problem")]
    rhs: RhsKind,
    /// Stopping tolerance of iterative modes.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    maxit: usize,
}

#[derive(Args)]
struct OutputArgs {
    /// Report file; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

fn config(problem: &ProblemArgs, solver: Option<&SolverArgs>, mode: Mode, output: Option<&OutputArgs>) -> RunConfig {
    let mut c = RunConfig {
        problem: problem.problem,
        n: problem.n,
        alpha: problem.alpha,
        a: problem.a,
        kappa: problem.kappa,
        ppw: problem.ppw,
        precision: problem.precision,
        mode,
        ..RunConfig::default()
    };
    if let Some(s) = solver {
        c.input = s.input.clone();
        c.eps = s.eps;
        c.eta = s.eta;
        c.leaf = s.leaf;
        c.workers = s.workers;
        c.seed = s.seed;
        c.rhs = s.rhs;
        c.tol = s.tol;
        c.maxit = s.maxit;
    }
    if let Some(o) = output {
        c.output = o.output.clone();
        c.format = o.format;
    }
    c
}

fn emit(text: &str, output: &OutputArgs) -> Result<(), CliError> {
    match &output.output {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn single(c: RunConfig, output: &OutputArgs) -> Result<(), CliError> {
    let r = run::run(&c)?;
    let text = match output.format {
        Format::Json => report::to_json(&r),
        Format::Csv => report::to_csv(&[SweepPoint {
            param: None,
            value: None,
            outcome: Outcome::Ok { report: r },
        }]),
    };
    emit(&text, output)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { problem, out } => {
            let c = config(&problem, None, Mode::CrDense, None);
            run::generate(&c, &out)?;
            eprintln!("wrote {} planes to {}", c.n, out.display());
            Ok(())
        }
        Command::Factor {
            problem,
            solver,
            mode,
            output,
        } => {
            let mode = match mode {
                FactorMode::Acr => Mode::Acr,
                FactorMode::CrDense => Mode::CrDense,
            };
            if output.format != Format::Json {
                return Err(CliError::Usage("factor reports are JSON only".into()));
            }
            let r = run::factor_only(&config(&problem, Some(&solver), mode, Some(&output)))?;
            emit(&report::to_json(&r), &output)
        }
        Command::Solve {
            problem,
            solver,
            mode,
            output,
        } => {
            let mode = match mode {
                SolveMode::Acr => Mode::Acr,
                SolveMode::CrDense => Mode::CrDense,
                SolveMode::Refine => Mode::Refine,
            };
            single(config(&problem, Some(&solver), mode, Some(&output)), &output)
        }
        Command::Pcg { problem, solver, output } => single(config(&problem, Some(&solver), Mode::Pcg, Some(&output)), &output),
        Command::Bench {
            problem,
            solver,
            mode,
            sweep,
            output,
        } => {
            let (param, values) = run::parse_axis(&sweep)?;
            let points = run::sweep(&config(&problem, Some(&solver), mode, Some(&output)), &param, &values)?;
            emit(&report::encode(&points, output.format), &output)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.info() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
