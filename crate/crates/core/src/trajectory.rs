//! Seeded quantum trajectories and deterministic ensembles.
//!
//! Each step consumes exactly one uniform draw `u`. With branch probability
//! `p = κΔt⟨c†c⟩`, `u < p` selects an emission: the state is reset by `c`,
//! displaced by the feedback pulse, and then propagated by `K0` for the rest
//! of the interval. Otherwise only `K0` is applied.
//!
//! Two backends implement the same process:
//!
//! * [`Backend::Fock`] works with dense states on the truncated space and
//!   aborts when the top-level population exceeds the leakage budget.
//! * [`Backend::Coherent`] tracks the coherent amplitude α directly. With
//!   `H = 0`, `L = c` and displacement feedback every trajectory started in a
//!   coherent state stays coherent, so this is exact and has no truncation.
//!   Runaway trajectories with `κΔt|α|² > 1` emit with certainty and are
//!   counted in [`TrajectoryRecord::saturated_steps`].

use std::io::{self, Write};

use bitvec::prelude::*;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    self, ConditionalGenerator, DecayRate, FeedbackRule, Propagator, TimeStep,
};
use crate::error::{Error, Result};
use crate::fock::{self, CoherentAmplitude, FockOperator, PureState, TruncationDim};
use crate::master;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Fock,
    Coherent,
}

/// Which per-step traces a trajectory keeps besides its emission flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordMode {
    /// ⟨c⟩, ⟨c†c⟩ and the branch probability.
    Full,
    /// ⟨c⟩ only.
    Thin,
    /// Emission flags only.
    Emissions,
}

/// Physical and numerical parameters of one simulated experiment.
///
/// Units: ħ = 1, rates in units of κ, time in units of 1/κ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dim: TruncationDim,
    /// Field prepared before the measurement stage.
    pub alpha0: CoherentAmplitude,
    /// The unknown phase φ.
    pub phi: f64,
    /// |β| of the feedback displacement; 0 disables feedback.
    pub feedback_magnitude: f64,
    /// Fixed phase of β; `None` uses β = |β|e^{iφ}.
    pub feedback_direction: Option<f64>,
    pub kappa: DecayRate,
    pub dt: f64,
    pub n_steps: usize,
    /// Maximum top-level population; `None` only reports it.
    pub leakage_budget: Option<f64>,
    pub backend: Backend,
    pub record: RecordMode,
}

pub const DEFAULT_LEAKAGE_BUDGET: f64 = 1e-6;

impl SimConfig {
    /// α0 = 2, β = 2e^{iφ}, κ = 1, κΔt = 0.01, 500 steps, 40 levels.
    pub fn fig3(phi: f64) -> Self {
        Self {
            dim: TruncationDim::new(40).expect("valid"),
            alpha0: CoherentAmplitude::new(2.0, 0.0).expect("valid"),
            phi,
            feedback_magnitude: 2.0,
            feedback_direction: None,
            kappa: DecayRate::new(1.0).expect("valid"),
            dt: 0.01,
            n_steps: 500,
            leakage_budget: Some(DEFAULT_LEAKAGE_BUDGET),
            backend: Backend::Fock,
            record: RecordMode::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::param("dt", format!("must be positive, got {}", self.dt)));
        }
        if self.n_steps == 0 {
            return Err(Error::param("n_steps", "must be at least 1"));
        }
        if !self.phi.is_finite() {
            return Err(Error::param("phi", "must be finite"));
        }
        if !(self.feedback_magnitude.is_finite() && self.feedback_magnitude >= 0.0) {
            return Err(Error::param("feedback_magnitude", "must be finite and >= 0"));
        }
        if let Some(dir) = self.feedback_direction {
            if !dir.is_finite() {
                return Err(Error::param("feedback_direction", "must be finite"));
            }
        }
        if let Some(b) = self.leakage_budget {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::param("leakage_budget", format!("must lie in (0, 1), got {b}")));
            }
        }
        Ok(())
    }

    pub fn total_time(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn time_step(&self) -> Result<TimeStep> {
        TimeStep::new(self.dt, self.kappa)
    }

    /// Time at the end of step `k`.
    pub fn time_after_step(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.dt
    }

    pub fn has_feedback(&self) -> bool {
        self.feedback_magnitude > 0.0
    }

    pub fn feedback_beta(&self) -> CoherentAmplitude {
        let phase = self.feedback_direction.unwrap_or(self.phi);
        CoherentAmplitude::new(self.feedback_magnitude, phase).unwrap_or(CoherentAmplitude::ZERO)
    }

    pub fn with_phi(&self, phi: f64) -> Self {
        Self { phi, ..self.clone() }
    }

    pub fn with_steps(&self, n_steps: usize) -> Self {
        Self { n_steps, ..self.clone() }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// One stochastic run. Trace vectors are empty when not recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    emitted: BitVec<u64, Lsb0>,
    /// ⟨c⟩ after each step.
    pub amp_trace: Vec<Complex64>,
    /// ⟨c†c⟩ after each step.
    pub n_trace: Vec<f64>,
    /// Branch probability used at each step.
    pub p_trace: Vec<f64>,
    pub final_leakage: f64,
    pub max_leakage: f64,
    pub saturated_steps: usize,
}

impl TrajectoryRecord {
    fn with_capacity(seed: u64, n_steps: usize, mode: RecordMode) -> Self {
        let cap = |on: bool| if on { n_steps } else { 0 };
        Self {
            seed,
            emitted: BitVec::with_capacity(n_steps),
            amp_trace: Vec::with_capacity(cap(mode != RecordMode::Emissions)),
            n_trace: Vec::with_capacity(cap(mode == RecordMode::Full)),
            p_trace: Vec::with_capacity(cap(mode == RecordMode::Full)),
            final_leakage: 0.0,
            max_leakage: 0.0,
            saturated_steps: 0,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.emitted.len()
    }

    /// Emission flag of step `k`. Panics if `k` is out of range.
    pub fn emitted(&self, k: usize) -> bool {
        self.emitted[k]
    }

    pub fn emissions(&self) -> impl Iterator<Item = bool> + '_ {
        self.emitted.iter().by_vals()
    }

    pub fn emission_count(&self) -> usize {
        self.emitted.count_ones()
    }

    /// Copy with emission flags replaced; traces are kept.
    pub fn with_emissions(&self, flags: impl IntoIterator<Item = bool>) -> Self {
        let emitted: BitVec<u64, Lsb0> = flags.into_iter().collect();
        assert_eq!(emitted.len(), self.n_steps(), "flag count must match step count");
        Self {
            emitted,
            ..self.clone()
        }
    }

    fn hash_into(&self, h: &mut Sha256) {
        h.update(self.seed.to_le_bytes());
        h.update((self.n_steps() as u64).to_le_bytes());
        for w in self.emitted.as_raw_slice() {
            h.update(w.to_le_bytes());
        }
        for z in &self.amp_trace {
            h.update(z.re.to_bits().to_le_bytes());
            h.update(z.im.to_bits().to_le_bytes());
        }
        for x in self.n_trace.iter().chain(&self.p_trace) {
            h.update(x.to_bits().to_le_bytes());
        }
        h.update(self.final_leakage.to_bits().to_le_bytes());
        h.update(self.max_leakage.to_bits().to_le_bytes());
        h.update((self.saturated_steps as u64).to_le_bytes());
    }
}

/// A trajectory dropped from an ensemble for exceeding the leakage budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTrajectory {
    pub traj_id: usize,
    pub seed: u64,
    pub step: Option<usize>,
    pub leakage: f64,
}

/// All trajectories of one configuration, in index order.
#[derive(Debug, Clone)]
pub struct EnsembleRecord {
    pub config: SimConfig,
    pub master_seed: u64,
    pub n_traj: usize,
    pub records: Vec<TrajectoryRecord>,
    /// Trajectory index of each entry of `records`.
    pub traj_ids: Vec<usize>,
    pub skipped: Vec<SkippedTrajectory>,
}

impl EnsembleRecord {
    pub fn configs_hash(&self) -> String {
        self.config.digest()
    }

    pub fn n_steps(&self) -> usize {
        self.config.n_steps
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// SHA-256 over the configuration, master seed and every record.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.configs_hash().as_bytes());
        h.update(self.master_seed.to_le_bytes());
        h.update((self.n_traj as u64).to_le_bytes());
        for (id, rec) in self.traj_ids.iter().zip(&self.records) {
            h.update((*id as u64).to_le_bytes());
            rec.hash_into(&mut h);
        }
        for s in &self.skipped {
            h.update((s.traj_id as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Columnar CSV, one row per (trajectory, step). Columns not recorded
    /// under the ensemble's [`RecordMode`] are left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "traj_id,step,emitted,re_amp,im_amp,n_exp")?;
        for (id, rec) in self.traj_ids.iter().zip(&self.records) {
            for k in 0..rec.n_steps() {
                let (re, im) = match rec.amp_trace.get(k) {
                    Some(z) => (crate::csv_float(z.re), crate::csv_float(z.im)),
                    None => (String::new(), String::new()),
                };
                let n = rec.n_trace.get(k).map(|&x| crate::csv_float(x)).unwrap_or_default();
                writeln!(w, "{id},{k},{},{re},{im},{n}", u8::from(rec.emitted(k)))?;
            }
        }
        Ok(())
    }

    /// Metadata header accompanying the CSV.
    pub fn metadata(&self) -> serde_json::Value {
        let max_leak = self.records.iter().map(|r| r.max_leakage).fold(0.0, f64::max);
        let saturated: usize = self.records.iter().map(|r| r.saturated_steps).sum();
        serde_json::json!({
            "config": self.config,
            "config_digest": self.configs_hash(),
            "master_seed": self.master_seed,
            "seed_derivation": rng::SEED_DERIVATION,
            "n_traj": self.n_traj,
            "n_recorded": self.records.len(),
            "skipped": self.skipped,
            "skip_count": self.skipped.len(),
            "max_leakage": max_leak,
            "saturated_steps": saturated,
            "digest": self.digest(),
            "code_version": crate::VERSION,
        })
    }
}

/// Operators and propagators of the Fock backend, shared by all trajectories.
#[derive(Debug, Clone)]
pub struct FockModel {
    pub generator: ConditionalGenerator,
    pub k0: Propagator,
    pub feedback: Option<FeedbackRule>,
    pub dt: TimeStep,
}

impl FockModel {
    /// Measurement stage: `H = 0`, `L = c`, feedback `D(β)` after each emission.
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let generator = dynamics::build_conditional_generator(
            FockOperator::zero(d),
            fock::annihilation_op(d),
            cfg.kappa,
        )?;
        let dt = cfg.time_step()?;
        let k0 = dynamics::no_jump_propagator(&generator, dt);
        let feedback = cfg
            .has_feedback()
            .then(|| FeedbackRule::from_amplitude(cfg.feedback_beta(), d));
        Ok(Self {
            generator,
            k0,
            feedback,
            dt,
        })
    }
}

/// Result of a single [`step`].
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: PureState,
    pub emitted: bool,
    pub jump_probability: f64,
}

/// Advances `psi` by one interval given the uniform draw `u ∈ [0, 1)`.
pub fn step(
    psi: &PureState,
    k0: &Propagator,
    g: &ConditionalGenerator,
    fb: Option<&FeedbackRule>,
    dt: TimeStep,
    u: f64,
) -> Result<StepOutcome> {
    let p = dynamics::jump_probability(g, psi, dt)?;
    let emitted = u < p;
    let state = if emitted {
        let jumped = dynamics::apply_jump(g, fb, psi)?;
        dynamics::apply_no_jump(k0, &jumped)?.0
    } else {
        dynamics::apply_no_jump(k0, psi)?.0
    };
    Ok(StepOutcome {
        state,
        emitted,
        jump_probability: p,
    })
}

/// The coherent state `|α0⟩` on the truncated space.
pub fn prepare_initial_state(cfg: &SimConfig) -> Result<PureState> {
    let prep = fock::make_coherent_state(cfg.alpha0, cfg.dim);
    if let Some(budget) = cfg.leakage_budget {
        if prep.leakage > budget {
            return Err(Error::Truncation {
                step: None,
                leakage: prep.leakage,
                budget,
            });
        }
    }
    Ok(prep.state)
}

/// Outcome of relaxing a laser-driven cavity towards its stationary state.
#[derive(Debug, Clone, Serialize)]
pub struct PrepValidation {
    pub target: Complex64,
    pub stationary: Complex64,
    pub deviation: f64,
    pub duration: f64,
    /// (t, ⟨c⟩) samples of the relaxation.
    pub trace: Vec<(f64, Complex64)>,
    pub passed: bool,
}

/// Tolerance on the stationary field in [`validate_preparation`].
pub const PREP_TOLERANCE: f64 = 1e-3;

/// Drives the empty cavity with `H = i(η e^{iφ} c† − η* e^{−iφ} c)`,
/// `η = α0 κ/2`, for `duration` and compares the stationary `⟨c⟩` with
/// `α0 e^{iφ}`.
pub fn validate_preparation(cfg: &SimConfig, duration: f64, samples: usize) -> Result<PrepValidation> {
    cfg.validate()?;
    if !(duration >= 10.0 / cfg.kappa.get()) {
        return Err(Error::param("duration", "must be at least 10/kappa"));
    }
    let d = cfg.dim;
    let eta = cfg.alpha0.to_complex() * (0.5 * cfg.kappa.get()) * Complex64::from_polar(1.0, cfg.phi);
    let c = fock::annihilation_op(d);
    let drive = (c.matrix().adjoint() * eta - c.matrix() * eta.conj()) * Complex64::new(0.0, 1.0);
    let gen = master::LindbladGenerator::new(FockOperator::hermitian(drive)?, c.clone(), cfg.kappa)?;
    let rho0 = master::DensityMatrix::from_pure(&fock::vacuum(d));
    let samples = samples.max(1);
    let times: Vec<f64> = (0..=samples).map(|i| duration * i as f64 / samples as f64).collect();
    let states = master::evolve_density_series(&gen, &rho0, &times, master::EvolveMethod::default())?;
    let trace: Vec<(f64, Complex64)> = times
        .iter()
        .zip(&states)
        .map(|(&t, rho)| (t, rho.expectation(&c)))
        .collect();
    let stationary = trace.last().map(|x| x.1).unwrap_or_default();
    let target = cfg.alpha0.to_complex() * Complex64::from_polar(1.0, cfg.phi);
    let deviation = (stationary - target).norm();
    Ok(PrepValidation {
        target,
        stationary,
        deviation,
        duration,
        trace,
        passed: deviation < PREP_TOLERANCE,
    })
}

fn run_fock(cfg: &SimConfig, model: &FockModel, seed: u64) -> Result<TrajectoryRecord> {
    let mut rng = rng::trajectory_rng(seed);
    let mut rec = TrajectoryRecord::with_capacity(seed, cfg.n_steps, cfg.record);
    let mut psi = prepare_initial_state(cfg)?;
    rec.max_leakage = psi.leakage();
    for k in 0..cfg.n_steps {
        let u: f64 = rng.random();
        let out = step(&psi, &model.k0, &model.generator, model.feedback.as_ref(), model.dt, u)?;
        psi = out.state;
        let leakage = psi.leakage();
        rec.max_leakage = rec.max_leakage.max(leakage);
        if let Some(budget) = cfg.leakage_budget {
            if leakage > budget {
                return Err(Error::Truncation {
                    step: Some(k),
                    leakage,
                    budget,
                });
            }
        }
        rec.emitted.push(out.emitted);
        match cfg.record {
            RecordMode::Full => {
                rec.amp_trace.push(fock::field_amplitude(&psi));
                rec.n_trace.push(psi.mean_photon_number());
                rec.p_trace.push(out.jump_probability);
            }
            RecordMode::Thin => rec.amp_trace.push(fock::field_amplitude(&psi)),
            RecordMode::Emissions => {}
        }
    }
    rec.final_leakage = psi.leakage();
    Ok(rec)
}

fn run_coherent(cfg: &SimConfig, seed: u64) -> TrajectoryRecord {
    let mut rng = rng::trajectory_rng(seed);
    let mut rec = TrajectoryRecord::with_capacity(seed, cfg.n_steps, cfg.record);
    let kdt = cfg.kappa.get() * cfg.dt;
    let decay = (-0.5 * kdt).exp();
    let beta = if cfg.has_feedback() {
        cfg.feedback_beta().to_complex()
    } else {
        Complex64::new(0.0, 0.0)
    };
    let mut alpha = cfg.alpha0.to_complex();
    for _ in 0..cfg.n_steps {
        let mut p = kdt * alpha.norm_sqr();
        if p > 1.0 {
            p = 1.0;
            rec.saturated_steps += 1;
        }
        let u: f64 = rng.random();
        let emitted = u < p;
        if emitted {
            alpha += beta;
        }
        alpha *= decay;
        rec.emitted.push(emitted);
        match cfg.record {
            RecordMode::Full => {
                rec.amp_trace.push(alpha);
                rec.n_trace.push(alpha.norm_sqr());
                rec.p_trace.push(p);
            }
            RecordMode::Thin => rec.amp_trace.push(alpha),
            RecordMode::Emissions => {}
        }
    }
    rec
}

enum Engine {
    Fock(Box<FockModel>),
    Coherent,
}

impl Engine {
    fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.backend {
            Backend::Fock => Engine::Fock(Box::new(FockModel::new(cfg)?)),
            Backend::Coherent => Engine::Coherent,
        })
    }

    fn run(&self, cfg: &SimConfig, seed: u64) -> Result<TrajectoryRecord> {
        match self {
            Engine::Fock(model) => run_fock(cfg, model, seed),
            Engine::Coherent => Ok(run_coherent(cfg, seed)),
        }
    }
}

/// A single trajectory; a deterministic function of `(cfg, seed)`.
pub fn run_trajectory(cfg: &SimConfig, seed: u64) -> Result<TrajectoryRecord> {
    Engine::new(cfg)?.run(cfg, seed)
}

/// Runs `n_traj` trajectories with seeds `split_seed(master_seed, i)` on
/// the current rayon pool. Output does not depend on the worker count.
///
/// Trajectories exceeding the leakage budget are skipped and listed; more
/// than 1% skipped is an error.
pub fn run_ensemble(cfg: &SimConfig, n_traj: usize, master_seed: u64) -> Result<EnsembleRecord> {
    if n_traj == 0 {
        return Err(Error::param("n_traj", "must be at least 1"));
    }
    let engine = Engine::new(cfg)?;
    let results: Vec<Result<TrajectoryRecord>> = (0..n_traj)
        .into_par_iter()
        .map(|i| engine.run(cfg, rng::split_seed(master_seed, i as u64)))
        .collect();

    let mut records = Vec::with_capacity(n_traj);
    let mut traj_ids = Vec::with_capacity(n_traj);
    let mut skipped = Vec::new();
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok(rec) => {
                records.push(rec);
                traj_ids.push(i);
            }
            Err(Error::Truncation { step, leakage, .. }) => skipped.push(SkippedTrajectory {
                traj_id: i,
                seed: rng::split_seed(master_seed, i as u64),
                step,
                leakage,
            }),
            Err(e) => return Err(e),
        }
    }
    if skipped.len() * 100 > n_traj {
        return Err(Error::TooManySkipped {
            skipped: skipped.len(),
            total: n_traj,
        });
    }
    if !skipped.is_empty() {
        log::warn!("{} of {n_traj} trajectories skipped for truncation leakage", skipped.len());
    }
    Ok(EnsembleRecord {
        config: cfg.clone(),
        master_seed,
        n_traj,
        records,
        traj_ids,
        skipped,
    })
}
