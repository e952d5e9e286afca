use std::path::PathBuf;
use std::process::ExitCode;

use cavfb_cli::{execute, parse_config, CliError, Experiment, Overrides};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cavfb", version, about = "Cavity feedback trajectory experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Trajectories per ensemble.
    #[arg(long, global = true)]
    ntraj: Option<usize>,
    /// Override a configuration key, e.g. `--set sim.dim=60`.
    #[arg(long = "set", global = true, value_name = "TABLE.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Compare trajectory averages with the master equation.
    OracleCheck,
    /// Post-selected field amplitude for several phases.
    Fig3Trace,
    /// Photon correlation g2(t, 0) over phases and times.
    G2Scan,
    /// Phase uncertainty versus measurement length and power-law fit.
    Scaling,
    /// Sequential measurements versus an effective entangled state.
    KrausDemo,
    /// Driven relaxation towards the prepared coherent field.
    PrepValidate,
}

impl From<Command> for Experiment {
    fn from(c: Command) -> Self {
        match c {
            Command::OracleCheck => Experiment::OracleCheck,
            Command::Fig3Trace => Experiment::Fig3Trace,
            Command::G2Scan => Experiment::G2Scan,
            Command::Scaling => Experiment::Scaling,
            Command::KrausDemo => Experiment::KrausDemo,
            Command::PrepValidate => Experiment::PrepValidate,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let overrides = Overrides {
        seed: cli.seed,
        n_traj: cli.ntraj,
        output_dir: cli.out.clone(),
        set: cli.set.clone(),
    };
    let cfg = parse_config(&text, Some(cli.command.into()), &overrides)?;
    let report = execute(&cfg, cli.workers)?;
    for line in &report.lines {
        println!("{line}");
    }
    println!("wrote {} files to {}", report.files.len(), cfg.output_dir.display());
    match report.failure {
        Some(msg) => Err(CliError::Statistical(msg)),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cavfb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
