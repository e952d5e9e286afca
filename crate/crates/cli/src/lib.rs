//! Batch front end for the `cavfb` binary: configuration, experiment
//! dispatch and staged output.

// Negated comparisons also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod output;

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use cavfb_core::Error;
use serde_json::json;

pub use config::{parse_config, Experiment, Overrides, RunConfig};
pub use experiments::Outcome;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("statistical check failed: {0}")]
    Statistical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Statistical(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Uninformative { .. } | Error::EmptySelection | Error::UndefinedCorrelation(_) => {
                CliError::Statistical(e.to_string())
            }
            Error::InvalidParameter { .. } | Error::InvalidScan(_) | Error::InvalidDimension(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

/// What a completed run wrote and reported.
#[derive(Debug)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
    pub failure: Option<String>,
}

/// Runs the experiment on `workers` threads (default: all cores) and
/// writes its artifacts plus `metadata.json` into the output directory.
///
/// A run whose statistical check fails still writes its outputs; the
/// failure is returned in [`RunReport::failure`].
pub fn execute(cfg: &RunConfig, workers: Option<usize>) -> Result<RunReport, CliError> {
    for w in &cfg.warnings {
        log::warn!("{w}");
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Runtime(e.to_string()))?;
    let threads = pool.current_num_threads();

    let start = Instant::now();
    let outcome = pool.install(|| experiments::run_experiment(cfg))?;
    let wall = start.elapsed().as_secs_f64();

    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let metadata = json!({
        "experiment": cfg.experiment.name(),
        "code_version": cavfb_core::VERSION,
        "config": cfg,
        "config_digest": cfg.sim.digest(),
        "master_seed": cfg.master_seed,
        "seed_derivation": cavfb_core::rng::SEED_DERIVATION,
        "n_traj": cfg.n_traj,
        "workers": threads,
        "wall_time_s": wall,
        "timestamp_unix": timestamp,
        "warnings": cfg.warnings,
        "status": if outcome.failure.is_some() { "statistical-failure" } else { "ok" },
        "failure": outcome.failure,
        "results": outcome.summary,
    });
    let mut artifacts = outcome.artifacts;
    artifacts.push(output::Artifact::new(
        "metadata.json",
        serde_json::to_vec_pretty(&metadata).map_err(|e| CliError::Runtime(e.to_string()))?,
    ));
    let files = output::commit(&cfg.output_dir, &artifacts)?;
    Ok(RunReport {
        files,
        lines: outcome.lines,
        failure: outcome.failure,
    })
}
