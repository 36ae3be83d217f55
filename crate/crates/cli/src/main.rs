use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use slowfast::error::Error;
use slowfast::experiments::{run_experiment, ExperimentConfig, OutputFormat, Pipeline};

const EXIT_CONFIG: u8 = 2;
const EXIT_PRECONDITION: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const EXIT_CHECK_FAILED: u8 = 5;
const EXIT_IO: u8 = 1;

/// Slow-fast SDE experiments with fractional noise.
#[derive(Debug, Parser)]
#[command(name = "slowfast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (INI). Without it the pipeline defaults are used.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Registry model, used when no config is given. Defaults to
    /// ou-quadratic, or ou-quadratic-extended for the extended pipeline.
    #[arg(long, global = true)]
    model: Option<String>,

    /// Output directory, overriding the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads; defaults to the machine parallelism.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Number of Monte Carlo paths, overriding the config.
    #[arg(long, global = true, value_name = "N")]
    paths: Option<usize>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Exit with status 5 when a pipeline check fails.
    #[arg(long, global = true)]
    check: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Sample paths and terminal statistics per scale level.
    Simulate,
    /// Invariant measure, averaged coefficients and the limit ODE.
    Average,
    /// Drift correctors and the corrector covariance.
    Poisson,
    /// Strong averaging error table and slope.
    Rates,
    /// Ergodic-average error table and slope.
    Ergodic,
    /// Fluctuation ensembles against the limit law.
    Fluctuations,
    /// Extended model in a chosen regime.
    Extended,
}

impl From<Command> for Pipeline {
    fn from(c: Command) -> Self {
        match c {
            Command::Simulate => Pipeline::Simulate,
            Command::Average => Pipeline::Average,
            Command::Poisson => Pipeline::Poisson,
            Command::Rates => Pipeline::Rates,
            Command::Ergodic => Pipeline::Ergodic,
            Command::Fluctuations => Pipeline::Fluctuations,
            Command::Extended => Pipeline::Extended,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    #[value(name = "csv+svg")]
    CsvSvg,
}

fn exit_code(e: &Error) -> (u8, &'static str) {
    match e {
        Error::Config(_) | Error::Parse(_) => (EXIT_CONFIG, "config"),
        Error::Domain(_) | Error::Precondition(_) | Error::UnsupportedDimension { .. } => {
            (EXIT_PRECONDITION, "precondition")
        }
        Error::Numerical(_) | Error::Simulation { .. } | Error::Eval(_) => {
            (EXIT_NUMERICAL, "numerical")
        }
        Error::Io(_) => (EXIT_IO, "io"),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let pipeline = Pipeline::from(cli.command);
    let mut config = match &cli.config {
        Some(_) if cli.model.is_some() => {
            return Err(Error::Config("--model and --config are exclusive".into()))
        }
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::parse_for(&text, Some(pipeline))?
        }
        None => {
            let model = cli
                .model
                .as_deref()
                .unwrap_or(ExperimentConfig::default_model(pipeline));
            slowfast::model::ModelSpec::registry(model)?;
            ExperimentConfig::default_for(pipeline, model)
        }
    };
    if let Some(dir) = &cli.out {
        config.outputs.dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    if let Some(paths) = cli.paths {
        if paths == 0 {
            return Err(Error::Config("--paths must be positive".into()));
        }
        config.run.paths = paths;
    }
    if let Some(f) = cli.format {
        config.outputs.format = match f {
            Format::Csv => OutputFormat::Csv,
            Format::CsvSvg => OutputFormat::CsvSvg,
        };
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error[config]: cannot start {n} worker threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let result = load_config(&cli).and_then(|config| run_experiment(&config));
    match result {
        Ok(report) => {
            println!("manifest: {}", report.manifest_path.display());
            for c in &report.manifest.checks {
                let verdict = if c.passed { "PASS" } else { "FAIL" };
                println!("{verdict} {}: {}", c.name, c.detail);
            }
            if cli.check && !report.passed() {
                ExitCode::from(EXIT_CHECK_FAILED)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            let (code, kind) = exit_code(&e);
            eprintln!("error[{kind}]: {e}");
            ExitCode::from(code)
        }
    }
}
