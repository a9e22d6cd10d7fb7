//! Command-line driver: argument parsing and exit-code mapping.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use opmismatch::experiment::{run_calibrate, run_experiment, run_reconstruct, run_simulate, AssumedOperator, Experiment};
use opmismatch::io::{load_config, read_per_scene, write_report, ExperimentConfig};
use opmismatch::protocol::ScenarioId;
use opmismatch::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "opmismatch", version, about = "Operator-mismatch experiments for compressive imaging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate ground truth and measurements for every scene.
    Simulate(RunArgs),
    /// Reconstruct one measurement file.
    Reconstruct(ReconstructArgs),
    /// Run the four scenarios and write reports.
    Protocol(RunArgs),
    /// Run scenario IV calibration only.
    Calibrate(RunArgs),
    /// Aggregate existing per-scene CSVs into a new report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated scene ids to keep.
    #[arg(long, value_delimiter = ',')]
    scenes: Option<Vec<String>>,
    /// Comma-separated method ids to keep.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Comma-separated scenarios (I, II, III, IV).
    #[arg(long, value_delimiter = ',', value_parser = parse_scenario)]
    scenarios: Option<Vec<ScenarioId>>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OperatorChoice {
    Nominal,
    True,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Measurement array file.
    #[arg(long)]
    measurement: PathBuf,
    /// Where to write the estimate.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "nominal")]
    operator: OperatorChoice,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Per-scene CSV files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_scenario(s: &str) -> std::result::Result<ScenarioId, String> {
    s.parse::<ScenarioId>().map_err(|e| e.to_string())
}

/// Parses `argv`, runs the command, and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate(args) => with_threads(args.threads, || {
            let (exp, out) = prepare(&args)?;
            run_simulate(&exp, &out)?;
            println!("wrote measurements for {} scene(s) to {}", exp.scenes.len(), out.display());
            Ok(())
        }),
        Command::Reconstruct(args) => with_threads(args.run.threads, || {
            let (exp, _) = prepare(&args.run)?;
            let assumed = match args.operator {
                OperatorChoice::Nominal => AssumedOperator::Nominal,
                OperatorChoice::True => AssumedOperator::True,
            };
            run_reconstruct(&exp, &args.measurement, assumed, &args.output)?;
            println!("wrote {}", args.output.display());
            Ok(())
        }),
        Command::Protocol(args) => with_threads(args.threads, || {
            let (exp, out) = prepare(&args)?;
            let run = run_experiment(&exp, &out)?;
            println!("{} scene/method run(s); reports in {}", run.runs.len(), out.display());
            Ok(())
        }),
        Command::Calibrate(args) => with_threads(args.threads, || {
            let (mut exp, out) = prepare(&args)?;
            exp.config.scenarios = vec![ScenarioId::Blind];
            for (method, est) in run_calibrate(&exp, &out)? {
                let est = serde_json::to_string(&est).expect("estimate serialises");
                println!("{method}: {est}");
            }
            Ok(())
        }),
        Command::Report(args) => {
            let mut results = Vec::new();
            for path in &args.inputs {
                results.extend(read_per_scene(path)?);
            }
            write_report(&results, &args.out)?;
            println!("aggregated {} row group(s) into {}", results.len(), args.out.display());
            Ok(())
        }
    }
}

fn with_threads(threads: Option<usize>, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    match threads {
        None => f(),
        Some(0) => Err(Error::Config {
            path: "--threads".into(),
            message: "must be at least 1".into(),
        }),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Parameter(format!("cannot start thread pool: {e}")))?
            .install(f),
    }
}

fn prepare(args: &RunArgs) -> Result<(Experiment, PathBuf)> {
    let mut config: ExperimentConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(scenarios) = &args.scenarios {
        if scenarios.is_empty() {
            return Err(Error::Config {
                path: "--scenarios".into(),
                message: "at least one scenario is required".into(),
            });
        }
        config.scenarios = scenarios.clone();
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    let out = config.output_dir.clone();
    let mut exp = Experiment::build(config)?;
    if let Some(ids) = &args.scenes {
        exp.select_scenes(ids)?;
    }
    if let Some(ids) = &args.methods {
        exp.select_methods(ids)?;
    }
    Ok((exp, out))
}
