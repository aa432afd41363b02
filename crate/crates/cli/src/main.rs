use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ntes_cli::config::RunConfig;
use ntes_cli::{CliError, Run};

#[derive(Parser, Debug)]
#[command(
    name = "ntes",
    version,
    about = "Spectral engine for thermal and post-quench Lieb-Liniger states"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Continue scans from their checkpoints.
    #[arg(long, global = true)]
    resume: bool,
    /// Worker threads for the scan (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (overrides `output`).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Random seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Solve the stationary-state TBA.
    Tba,
    /// Draw the base eigenstates.
    Sample,
    /// Scan the intermediate states of every base state.
    Scan,
    /// Broadened grid, manifest and line shapes from the scan reports.
    Spectrum,
    /// All stages in order.
    Pipeline,
    /// Oracle regression set and shell enumeration check.
    Verify,
}

fn load(cli: &Cli) -> Result<(RunConfig, PathBuf), CliError> {
    let (mut cfg, base) = match (&cli.config, cli.command) {
        (Some(p), _) => (
            RunConfig::load(p)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        (None, Command::Verify) => (RunConfig::default(), PathBuf::from(".")),
        (None, _) => {
            return Err(CliError::Config(
                "`--config PATH` is required for this subcommand".into(),
            ))
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.output {
        cfg.output = o.clone();
    }
    Ok((cfg, base))
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let (cfg, base) = load(cli)?;
    if let Some(k) = cli.workers {
        if k == 0 {
            return Err(CliError::Config("`--workers` must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let run = Run::new(cfg, cli.resume)?;
    log::info!("config hash {}", run.hash);
    match cli.command {
        Command::Tba => {
            ntes_cli::run_tba(&run)?;
        }
        Command::Sample => {
            let tba = ntes_cli::run_tba(&run)?;
            ntes_cli::run_sample(&run, &tba)?;
        }
        Command::Scan => {
            let states = ntes_cli::read_states(&run)?;
            let kind = ntes_cli::recorded_kind(&run)?;
            ntes_cli::run_scan(&run, &states, Some(kind))?;
        }
        Command::Spectrum => {
            let reports = ntes_cli::read_reports(&run)?;
            ntes_cli::run_spectrum(&run, &reports, ntes_cli::thermal_point(&run))?;
        }
        Command::Pipeline => {
            let m = ntes_cli::run_pipeline(&run)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&m).map_err(|e| CliError::Internal(e.to_string()))?
            );
        }
        Command::Verify => {
            let r = ntes_cli::run_verify(&run, &base)?;
            println!(
                "{} oracle cases, max relative error {:.3e}; {} shells equal",
                r.regression.cases.len(),
                r.regression.max_rel_err(),
                r.shells.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
