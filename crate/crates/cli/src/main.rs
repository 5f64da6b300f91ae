use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use distreg::Execution;
use distreg_cli::commands::{cmd_biomarkers, cmd_crossval, cmd_fit, cmd_represent, cmd_simulate};
use distreg_cli::{CliError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "distreg", version, about = "Distributional representations and scalar-on-function regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic cohort as epoch and outcome CSVs.
    Simulate,
    /// Per-subject curves and group barycenters.
    Represent,
    /// Penalized fits, smoothing paths and coefficient curves.
    Fit,
    /// Replicated k-fold CV table.
    Crossval,
    /// Regression biomarkers and their Spearman matrix.
    Biomarkers,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn dispatch(command: &Command, config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let exec = Execution::Parallel;
    match command {
        Command::Simulate => cmd_simulate(config),
        Command::Represent => cmd_represent(config, exec),
        Command::Fit => cmd_fit(config, exec),
        Command::Crossval => cmd_crossval(config, exec),
        Command::Biomarkers => cmd_biomarkers(config, exec),
    }
}

#[cfg(feature = "parallel")]
fn run_with_threads(threads: Option<usize>, command: &Command, config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    log::info!("using {} worker thread(s)", pool.current_num_threads());
    pool.install(|| dispatch(command, config))
}

#[cfg(not(feature = "parallel"))]
fn run_with_threads(threads: Option<usize>, command: &Command, config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    if threads.is_some_and(|n| n != 1) {
        log::warn!("built without the `parallel` feature; --threads ignored");
    }
    dispatch(command, config)
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let config = load_config(cli)?;
    run_with_threads(cli.threads, &cli.command, &config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                log::info!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
