//! Run configuration: a TOML document with `[run]`, `[sim]` and `[scan]`
//! tables. Every key is optional; missing keys take experiment-specific
//! defaults. Unknown keys are rejected.
//!
//! Angles are given in units of π (`phi_over_pi = 0.96`). The time step is
//! given as the dimensionless `kappa_dt`.

use std::f64::consts::PI;
use std::path::PathBuf;

use cavfb_core::metrology::{Averaging, PhaseOptions, SlopeRule};
use cavfb_core::trajectory::{Backend, RecordMode, SimConfig};
use cavfb_core::{CoherentAmplitude, DecayRate, TruncationDim};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    OracleCheck,
    Fig3Trace,
    G2Scan,
    Scaling,
    KrausDemo,
    PrepValidate,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::OracleCheck => "oracle-check",
            Experiment::Fig3Trace => "fig3-trace",
            Experiment::G2Scan => "g2-scan",
            Experiment::Scaling => "scaling",
            Experiment::KrausDemo => "kraus-demo",
            Experiment::PrepValidate => "prep-validate",
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    run: Option<RawRun>,
    sim: Option<RawSim>,
    scan: Option<RawScan>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    experiment: Option<Experiment>,
    n_traj: Option<usize>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawBudget {
    Value(f64),
    Word(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    dim: Option<usize>,
    alpha0: Option<f64>,
    alpha0_phase_over_pi: Option<f64>,
    phi_over_pi: Option<f64>,
    feedback_magnitude: Option<f64>,
    feedback_direction_over_pi: Option<f64>,
    kappa: Option<f64>,
    kappa_dt: Option<f64>,
    n_steps: Option<usize>,
    leakage_budget: Option<RawBudget>,
    backend: Option<Backend>,
    record: Option<RecordMode>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScan {
    phi_over_pi: Option<Vec<f64>>,
    n_list: Option<Vec<usize>>,
    steps: Option<Vec<usize>>,
    times: Option<Vec<f64>>,
    dphi: Option<f64>,
    slope_rule: Option<SlopeRule>,
    common_random_numbers: Option<bool>,
    averaging: Option<Averaging>,
    eta: Option<f64>,
    duration: Option<f64>,
    instances: Option<usize>,
    max_n: Option<usize>,
}

/// Scan and estimator settings, filled with defaults.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanConfig {
    /// Phases in radians.
    pub phi_list: Vec<f64>,
    pub n_list: Vec<usize>,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub dphi: f64,
    pub phase: PhaseOptions,
    pub averaging: Averaging,
    pub eta: Option<f64>,
    pub duration: f64,
    pub instances: usize,
    pub max_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub sim: SimConfig,
    pub n_traj: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub scan: ScanConfig,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

/// Command-line values that take precedence over the document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n_traj: Option<usize>,
    pub output_dir: Option<PathBuf>,
    /// `table.key=value` assignments; values use TOML syntax, bare words
    /// are read as strings.
    pub set: Vec<String>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn apply_set(doc: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("--set expects key=value, got `{assignment}`")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.len() != 2 || path.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("--set key must look like table.key, got `{key}`")));
    }
    let value = value.trim();
    let parsed = match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let table = doc
        .entry(path[0].to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match table {
        toml::Value::Table(t) => {
            t.insert(path[1].to_string(), parsed);
            Ok(())
        }
        _ => Err(config_err(format!("`{}` is not a table", path[0]))),
    }
}

struct Defaults {
    sim: SimConfig,
    n_traj: usize,
}

fn defaults(exp: Experiment) -> Defaults {
    let fig3 = SimConfig::fig3(PI);
    match exp {
        Experiment::OracleCheck => Defaults {
            sim: SimConfig {
                dim: TruncationDim::new(30).expect("valid"),
                alpha0: CoherentAmplitude::new(1.0, 0.0).expect("valid"),
                feedback_magnitude: 0.0,
                n_steps: 200,
                leakage_budget: None,
                ..fig3
            },
            n_traj: 10_000,
        },
        Experiment::Fig3Trace => Defaults {
            sim: SimConfig {
                backend: Backend::Coherent,
                record: RecordMode::Thin,
                ..fig3
            },
            n_traj: 10_000,
        },
        Experiment::G2Scan | Experiment::Scaling => Defaults {
            sim: SimConfig {
                backend: Backend::Coherent,
                record: RecordMode::Emissions,
                ..fig3
            },
            n_traj: if exp == Experiment::Scaling { 400_000 } else { 100_000 },
        },
        Experiment::KrausDemo | Experiment::PrepValidate => Defaults { sim: fig3, n_traj: 1 },
    }
}

pub const FIG3_PHIS_OVER_PI: [f64; 5] = [0.92, 0.94, 0.96, 0.98, 1.0];
pub const SCALING_N: [usize; 7] = [50, 75, 110, 160, 240, 350, 500];

fn build_sim(base: SimConfig, raw: RawSim, warnings: &mut Vec<String>) -> Result<SimConfig, CliError> {
    let mut sim = base;
    if let Some(d) = raw.dim {
        sim.dim = TruncationDim::new(d).map_err(|e| config_err(e.to_string()))?;
    }
    if raw.alpha0.is_some() || raw.alpha0_phase_over_pi.is_some() {
        let modulus = raw.alpha0.unwrap_or(sim.alpha0.modulus());
        let phase = raw.alpha0_phase_over_pi.map(|p| p * PI).unwrap_or(sim.alpha0.phase());
        sim.alpha0 = CoherentAmplitude::new(modulus, phase).map_err(|e| config_err(e.to_string()))?;
    }
    if let Some(p) = raw.phi_over_pi {
        sim.phi = p * PI;
    }
    if let Some(m) = raw.feedback_magnitude {
        sim.feedback_magnitude = m;
    }
    if let Some(d) = raw.feedback_direction_over_pi {
        sim.feedback_direction = Some(d * PI);
    }
    if let Some(k) = raw.kappa {
        sim.kappa = DecayRate::new(k).map_err(|e| config_err(e.to_string()))?;
    }
    let kappa_dt = raw.kappa_dt.unwrap_or(sim.dt * sim.kappa.get());
    if !(kappa_dt.is_finite() && kappa_dt > 0.0) {
        return Err(config_err(format!("kappa_dt must be positive, got {kappa_dt}")));
    }
    sim.dt = kappa_dt / sim.kappa.get();
    if let Some(n) = raw.n_steps {
        sim.n_steps = n;
    }
    match raw.leakage_budget {
        None => {}
        Some(RawBudget::Value(b)) => sim.leakage_budget = Some(b),
        Some(RawBudget::Word(w)) if w == "off" => sim.leakage_budget = None,
        Some(RawBudget::Word(w)) => {
            return Err(config_err(format!("leakage_budget must be a number or \"off\", got `{w}`")));
        }
    }
    if let Some(b) = raw.backend {
        sim.backend = b;
    }
    if let Some(r) = raw.record {
        sim.record = r;
    }
    sim.validate().map_err(|e| config_err(e.to_string()))?;

    if kappa_dt > 0.1 {
        warnings.push(format!("kappa_dt = {kappa_dt} exceeds 0.1; first-order branch probabilities become inaccurate"));
    }
    let a2 = sim.alpha0.modulus().powi(2);
    if sim.backend == Backend::Fock && (sim.dim.get() as f64) < 4.0 * a2 + 20.0 {
        warnings.push(format!(
            "dim = {} is below 4|alpha0|^2 + 20 = {}",
            sim.dim.get(),
            4.0 * a2 + 20.0
        ));
    }
    Ok(sim)
}

fn build_scan(exp: Experiment, sim: &SimConfig, raw: RawScan) -> Result<ScanConfig, CliError> {
    let phi_list: Vec<f64> = match raw.phi_over_pi {
        Some(v) => v.into_iter().map(|p| p * PI).collect(),
        None => match exp {
            Experiment::Fig3Trace | Experiment::G2Scan => FIG3_PHIS_OVER_PI.iter().map(|p| p * PI).collect(),
            _ => vec![sim.phi],
        },
    };
    if phi_list.is_empty() || phi_list.iter().any(|p| !p.is_finite()) {
        return Err(config_err("scan.phi_over_pi must be a non-empty list of finite numbers"));
    }
    let n_list = raw.n_list.unwrap_or_else(|| SCALING_N.to_vec());
    if exp == Experiment::Scaling {
        cavfb_core::metrology::validate_scan(&n_list).map_err(|e| config_err(e.to_string()))?;
    }
    let steps = raw.steps.unwrap_or_else(|| {
        [10, 50, 100, 200, 300, 400]
            .into_iter()
            .chain(std::iter::once(sim.n_steps - 1))
            .filter(|&s| s >= 1 && s < sim.n_steps)
            .collect()
    });
    if exp == Experiment::G2Scan {
        if steps.is_empty() {
            return Err(config_err("scan.steps must not be empty"));
        }
        if let Some(&bad) = steps.iter().find(|&&s| s == 0 || s >= sim.n_steps) {
            return Err(config_err(format!("scan.steps entry {bad} must lie in 1..{}", sim.n_steps)));
        }
    }
    let times = raw.times.unwrap_or_else(|| vec![0.25, 0.5, 1.0, 2.0]);
    if exp == Experiment::OracleCheck {
        for &t in &times {
            let k = (t / sim.dt).round();
            if !(t >= 0.0 && (k * sim.dt - t).abs() <= 1e-9 * t.max(1.0) && k as usize <= sim.n_steps) {
                return Err(config_err(format!(
                    "scan.times entry {t} must be a multiple of dt within the simulated interval"
                )));
            }
        }
    }
    let dphi = raw.dphi.unwrap_or(0.1);
    if !(dphi > 0.0 && dphi < PI) {
        return Err(config_err("scan.dphi must lie in (0, pi)"));
    }
    if let Some(eta) = raw.eta {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(config_err("scan.eta must lie in (0, 1]"));
        }
    }
    let duration = raw.duration.unwrap_or(20.0 / sim.kappa.get());
    if exp == Experiment::PrepValidate && !(duration >= 10.0 / sim.kappa.get()) {
        return Err(config_err("scan.duration must be at least 10/kappa"));
    }
    let max_n = raw.max_n.unwrap_or(8);
    if !(1..=cavfb_core::kraus::MAX_EFFECTIVE_N).contains(&max_n) {
        return Err(config_err(format!(
            "scan.max_n must lie in 1..={}",
            cavfb_core::kraus::MAX_EFFECTIVE_N
        )));
    }
    Ok(ScanConfig {
        phi_list,
        n_list,
        steps,
        times,
        dphi,
        phase: PhaseOptions {
            rule: raw.slope_rule.unwrap_or_default(),
            common_random_numbers: raw.common_random_numbers.unwrap_or(false),
        },
        averaging: raw.averaging.unwrap_or_default(),
        eta: raw.eta,
        duration,
        instances: raw.instances.unwrap_or(200),
        max_n,
    })
}

/// Parses and validates a configuration document. `experiment` (from the
/// subcommand) must agree with `run.experiment` when both are given.
pub fn parse_config(text: &str, experiment: Option<Experiment>, ov: &Overrides) -> Result<RunConfig, CliError> {
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
    for s in &ov.set {
        apply_set(&mut doc, s)?;
    }
    let raw: RawConfig = toml::Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
    let run = raw.run.unwrap_or_default();
    let exp = match (experiment, run.experiment) {
        (Some(a), Some(b)) if a != b => {
            return Err(config_err(format!(
                "subcommand `{}` conflicts with run.experiment = \"{}\"",
                a.name(),
                b.name()
            )))
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => return Err(config_err("missing run.experiment")),
    };
    let d = defaults(exp);
    let mut warnings = Vec::new();
    let sim = build_sim(d.sim, raw.sim.unwrap_or_default(), &mut warnings)?;
    let scan = build_scan(exp, &sim, raw.scan.unwrap_or_default())?;
    let n_traj = ov.n_traj.or(run.n_traj).unwrap_or(d.n_traj);
    if n_traj == 0 {
        return Err(config_err("n_traj must be at least 1"));
    }
    Ok(RunConfig {
        experiment: exp,
        sim,
        n_traj,
        master_seed: ov.seed.or(run.seed).unwrap_or(1),
        output_dir: ov
            .output_dir
            .clone()
            .or(run.output_dir)
            .unwrap_or_else(|| PathBuf::from("out").join(exp.name())),
        scan,
        warnings,
    })
}
