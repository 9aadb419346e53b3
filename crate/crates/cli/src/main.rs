//! `discover`: launch, resume, inspect and compare program-discovery runs.
//!
//! Exit codes: 0 success, 1 runtime failure (including aborted runs),
//! 2 invalid configuration or arguments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use discover_core::db::{RunStore, CONFIG_FILE, DB_FILE};
use discover_core::harness::{EvaluatorSpec, ExternalEvaluator};
use discover_core::tasks::Formulation;
use discover_core::{
    compare, components, BuiltinEvaluator, Direction, Discovery, Error, Evaluator, RunConfig, StopReason, TaskId,
    TrajectoryTable,
};
use tracing_subscriber::EnvFilter;

#[derive(Parser, Debug)]
#[command(name = "discover", version, about = "Autonomous program discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run (or resume) a discovery loop
    Run(RunArgs),
    /// Evaluate one program and print the result as a JSON line
    Eval(EvalArgs),
    /// Print the best-so-far trajectory of a run as CSV
    Report(ReportArgs),
    /// Compare runs
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON run configuration
    #[arg(long, required_unless_present = "resume")]
    config: Option<PathBuf>,
    /// Continue the run stored in this directory
    #[arg(long, value_name = "RUN_DIR")]
    resume: Option<PathBuf>,
    /// Parent directory for new runs
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
    /// Name of the new run directory (default: derived from the clock)
    #[arg(long)]
    run_id: Option<String>,
    /// Abort after this many consecutive iterations in which every generation failed (0 = never)
    #[arg(long, default_value_t = 3)]
    max_failed_iterations: u32,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Built-in task: circle_packing or min_overlap
    #[arg(long, conflicts_with = "cmd", required_unless_present = "cmd")]
    task: Option<TaskId>,
    /// External evaluator command; the candidate path is appended as the last argument
    #[arg(long)]
    cmd: Option<String>,
    /// Extra argument for the external command (repeatable)
    #[arg(long = "arg", allow_hyphen_values = true)]
    args: Vec<String>,
    /// Candidate program file
    #[arg(long)]
    program: PathBuf,
    /// Timeout for external evaluators, seconds
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    /// Optimization direction for external evaluators
    #[arg(long, default_value = "maximize")]
    direction: Direction,
    /// Overlap objective for min_overlap
    #[arg(long, value_parser = parse_formulation)]
    formulation: Option<Formulation>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    run_dir: PathBuf,
    /// Also write an SVG chart of best score against iteration
    #[arg(long)]
    plot: bool,
    /// SVG destination (default: <run_dir>/trajectory.svg)
    #[arg(long, requires = "plot")]
    plot_out: Option<PathBuf>,
    /// Add a scaled_score column with c / best_score
    #[arg(long)]
    scale_c: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum BenchCommand {
    /// Iterations-to-threshold of run A (baseline) and run B, and their ratio
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long)]
        threshold: f64,
    },
}

fn parse_formulation(s: &str) -> Result<Formulation, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| format!("unknown formulation {s:?}; use complement_correlation or self_convolution"))
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 2, error: error.into() }
    }

    fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 1, error: error.into() }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Report(args) => cmd_report(args),
        Command::Bench(BenchCommand::Compare { run_a, run_b, threshold }) => cmd_bench_compare(&run_a, &run_b, threshold),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

/// Reads a config file. `initial_program_file` (relative to the config) may
/// stand in for `initial_program`.
fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(Failure::config)?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("{} is not valid JSON", path.display()))
        .map_err(Failure::config)?;
    if let Some(obj) = value.as_object_mut() {
        if let Some(file) = obj.remove("initial_program_file") {
            let file = file
                .as_str()
                .ok_or_else(|| Failure::config(anyhow!("initial_program_file must be a string")))?;
            let resolved = path.parent().unwrap_or(Path::new(".")).join(file);
            let program = std::fs::read_to_string(&resolved)
                .with_context(|| format!("initial_program_file {} cannot be read", resolved.display()))
                .map_err(Failure::config)?;
            obj.entry("initial_program").or_insert(serde_json::Value::String(program));
        }
    }
    let config: RunConfig = serde_json::from_value(value)
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(Failure::config)?;
    config.validate().map_err(Failure::config)?;
    Ok(config)
}

fn fresh_run_dir(runs_dir: &Path, run_id: Option<String>) -> PathBuf {
    if let Some(id) = run_id {
        return runs_dir.join(id);
    }
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let base = format!("run-{secs}");
    let mut dir = runs_dir.join(&base);
    let mut n = 1;
    while dir.exists() {
        dir = runs_dir.join(format!("{base}-{n}"));
        n += 1;
    }
    dir
}

fn cmd_run(args: RunArgs) -> CmdResult {
    let (config, store, loaded) = match &args.resume {
        Some(dir) => {
            let (store, loaded) = RunStore::open(dir).map_err(|e| match e {
                Error::Io { .. } => Failure::runtime(anyhow!("{e}; is {} a run directory?", dir.display())),
                other => Failure::runtime(other),
            })?;
            if let Some(path) = &args.config {
                if load_config(path)? != loaded.config {
                    return Err(Failure::config(anyhow!(
                        "{} differs from the run's own {CONFIG_FILE}",
                        path.display()
                    )));
                }
            }
            (loaded.config.clone(), store, Some(loaded))
        }
        None => {
            let path = args.config.as_deref().ok_or_else(|| Failure::config(anyhow!("--config is required")))?;
            let config = load_config(path)?;
            let dir = fresh_run_dir(&args.runs_dir, args.run_id.clone());
            let store = RunStore::create(&dir, &config).map_err(Failure::runtime)?;
            (config, store, None)
        }
    };
    let run_dir = store.dir().to_path_buf();
    let (providers, evaluator) = components(&config).map_err(Failure::config)?;
    eprintln!("run directory: {}", run_dir.display());

    let discovery = Discovery::new(&config, &providers, evaluator.as_ref())
        .map_err(Failure::config)?
        .with_max_failed_iterations(args.max_failed_iterations);
    let discovery = match loaded {
        Some(loaded) => discovery.resume(store, loaded),
        None => Ok(discovery.with_store(store)),
    }
    .map_err(Failure::runtime)?;
    let report = discovery.run().map_err(Failure::runtime)?;

    let best = report.best_score().map_or_else(|| "none".to_owned(), |s| s.to_string());
    println!(
        "best score {best} after {} iterations ({} attempts), stop reason {}",
        report.iterations_used,
        report.attempts,
        serde_json::to_value(report.stop_reason).map_err(Failure::runtime)?.as_str().unwrap_or("?")
    );
    if report.stop_reason == StopReason::Aborted {
        return Err(Failure::runtime(anyhow!(
            "run aborted: every generation failed in consecutive iterations; see {}",
            run_dir.join(DB_FILE).display()
        )));
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let program = std::fs::read_to_string(&args.program)
        .with_context(|| format!("cannot read program {}", args.program.display()))
        .map_err(Failure::runtime)?;
    let evaluator: Box<dyn Evaluator> = match (&args.task, &args.cmd) {
        (Some(task), _) => {
            let mut ev = BuiltinEvaluator::new(*task);
            if let Some(f) = args.formulation {
                ev = ev.with_formulation(f);
            }
            Box::new(ev)
        }
        (None, Some(cmd)) => {
            let spec = EvaluatorSpec::external(cmd.clone(), args.args.clone()).with_timeout(args.timeout);
            spec.validate().map_err(Failure::config)?;
            let ev = ExternalEvaluator::new(cmd.clone(), args.args.clone(), args.timeout, args.direction);
            ev.check_command().map_err(Failure::config)?;
            Box::new(ev)
        }
        (None, None) => return Err(Failure::config(anyhow!("one of --task or --cmd is required"))),
    };
    let result = evaluator.evaluate(&program);
    println!("{}", serde_json::to_string(&result).map_err(Failure::runtime)?);
    Ok(())
}

fn cmd_report(args: ReportArgs) -> CmdResult {
    let mut table = TrajectoryTable::load(&args.run_dir).map_err(Failure::runtime)?;
    if let Some(c) = args.scale_c {
        table = table.with_scale(c);
    }
    print!("{}", table.to_csv().map_err(Failure::runtime)?);
    if args.plot {
        let out = args.plot_out.unwrap_or_else(|| args.run_dir.join("trajectory.svg"));
        std::fs::write(&out, table.to_svg())
            .with_context(|| format!("cannot write {}", out.display()))
            .map_err(Failure::runtime)?;
        eprintln!("plot written to {}", out.display());
    }
    Ok(())
}

fn cmd_bench_compare(run_a: &Path, run_b: &Path, threshold: f64) -> CmdResult {
    let a = TrajectoryTable::load(run_a).map_err(Failure::runtime)?;
    let b = TrajectoryTable::load(run_b).map_err(Failure::runtime)?;
    let comparison = compare(&a, &b, threshold).map_err(Failure::config)?;
    println!("{}", comparison.summary());
    println!("{}", serde_json::to_string(&comparison).map_err(Failure::runtime)?);
    Ok(())
}
