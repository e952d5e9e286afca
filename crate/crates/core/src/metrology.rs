//! Post-selection, photon correlations and phase-estimation statistics.
//!
//! The signal is `g²(t, 0) = I(t|0) / I(t)` where `I(t)` is the fraction of
//! trajectories emitting in the step ending at `t` and `I(t|0)` the same
//! fraction among trajectories that emitted in step 0. Emissions in between
//! are ignored. Binomial errors use the `(k+1)/(n+2)` estimate whenever a
//! count is below 30.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::trajectory::{self, EnsembleRecord, RecordMode, SimConfig};

/// Trajectories of an ensemble that emitted during step 0.
#[derive(Debug, Clone)]
pub struct PostselectedSubensemble<'a> {
    pub parent: &'a EnsembleRecord,
    /// Positions in `parent.records`.
    pub selected_indices: Vec<usize>,
    pub fraction: f64,
    pub fraction_err: f64,
}

pub fn postselect(ensemble: &EnsembleRecord) -> Result<PostselectedSubensemble<'_>> {
    if ensemble.records.is_empty() {
        return Err(Error::param("ensemble", "no recorded trajectories"));
    }
    let selected_indices: Vec<usize> = ensemble
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.emitted(0))
        .map(|(i, _)| i)
        .collect();
    if selected_indices.is_empty() {
        return Err(Error::EmptySelection);
    }
    let n = ensemble.records.len();
    let (fraction, fraction_err) = binomial(selected_indices.len(), n);
    Ok(PostselectedSubensemble {
        parent: ensemble,
        selected_indices,
        fraction,
        fraction_err,
    })
}

/// How per-trajectory field amplitudes are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// `|mean ⟨c⟩|`.
    #[default]
    ModulusOfMean,
    /// `mean |⟨c⟩|`.
    MeanOfModulus,
}

/// `(t, |α(t)|)` for every step of the subensemble.
pub fn amplitude_trace(sub: &PostselectedSubensemble<'_>, averaging: Averaging) -> Result<Vec<(f64, f64)>> {
    let cfg = &sub.parent.config;
    let n_steps = cfg.n_steps;
    let mut sum_c = vec![num_complex::Complex64::new(0.0, 0.0); n_steps];
    let mut sum_abs = vec![0.0; n_steps];
    for &i in &sub.selected_indices {
        let trace = &sub.parent.records[i].amp_trace;
        if trace.len() != n_steps {
            return Err(Error::MissingTrace("amp_trace"));
        }
        for (k, z) in trace.iter().enumerate() {
            sum_c[k] += z;
            sum_abs[k] += z.norm();
        }
    }
    let m = sub.selected_indices.len() as f64;
    Ok((0..n_steps)
        .map(|k| {
            let v = match averaging {
                Averaging::ModulusOfMean => sum_c[k].norm() / m,
                Averaging::MeanOfModulus => sum_abs[k] / m,
            };
            (cfg.time_after_step(k), v)
        })
        .collect())
}

/// Agresti-style correction applies below this count.
pub const SMALL_COUNT: usize = 30;
/// Fewer conditional emissions than this mark an estimate as unreliable.
pub const MIN_CONDITIONAL_EMISSIONS: usize = 10;

/// Proportion `k/n` and its binomial standard error.
pub fn binomial(k: usize, n: usize) -> (f64, f64) {
    let p = k as f64 / n as f64;
    let se = if k < SMALL_COUNT || n - k < SMALL_COUNT {
        let nt = n as f64 + 2.0;
        let pt = (k as f64 + 1.0) / nt;
        (pt * (1.0 - pt) / nt).sqrt()
    } else {
        (p * (1.0 - p) / n as f64).sqrt()
    };
    (p, se)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationEstimate {
    pub step_t: usize,
    pub g2: f64,
    pub std_err: f64,
    /// Trajectories emitting in both step 0 and step `t`.
    pub n_conditional: usize,
    /// Trajectories emitting in step 0.
    pub n_selected: usize,
    pub i_t: f64,
    pub i_t_given_0: f64,
    pub low_statistics: bool,
}

pub fn estimate_g2(ensemble: &EnsembleRecord, step_t: usize) -> Result<CorrelationEstimate> {
    let n_steps = ensemble.n_steps();
    if step_t >= n_steps {
        return Err(Error::StepOutOfRange { step: step_t, n_steps });
    }
    let n = ensemble.records.len();
    if n == 0 {
        return Err(Error::param("ensemble", "no recorded trajectories"));
    }
    let (mut sel, mut at_t, mut both) = (0usize, 0usize, 0usize);
    for r in &ensemble.records {
        let e0 = r.emitted(0);
        let et = r.emitted(step_t);
        sel += usize::from(e0);
        at_t += usize::from(et);
        both += usize::from(e0 && et);
    }
    if at_t == 0 {
        return Err(Error::UndefinedCorrelation(step_t));
    }
    if sel == 0 {
        return Err(Error::EmptySelection);
    }
    let (i_t, se_t) = binomial(at_t, n);
    let (i_c, se_c) = binomial(both, sel);
    let g2 = i_c / i_t;
    let std_err = ((se_c / i_t).powi(2) + (i_c * se_t / (i_t * i_t)).powi(2)).sqrt();
    Ok(CorrelationEstimate {
        step_t,
        g2,
        std_err,
        n_conditional: both,
        n_selected: sel,
        i_t,
        i_t_given_0: i_c,
        low_statistics: both < MIN_CONDITIONAL_EMISSIONS,
    })
}

/// Keeps each recorded emission independently with probability `eta`,
/// modelling a detector of efficiency `eta`. Deterministic in `seed`.
pub fn thin_emissions(ensemble: &EnsembleRecord, eta: f64, seed: u64) -> Result<EnsembleRecord> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::param("eta", "detector efficiency must lie in (0, 1]"));
    }
    let records = ensemble
        .records
        .iter()
        .zip(&ensemble.traj_ids)
        .map(|(r, &id)| {
            let mut rng = rng::trajectory_rng(rng::split_seed(seed, id as u64));
            let flags: Vec<bool> = r.emissions().map(|e| e && rng.random::<f64>() < eta).collect();
            r.with_emissions(flags)
        })
        .collect();
    Ok(EnsembleRecord {
        records,
        ..ensemble.clone()
    })
}

/// Finite-difference rule for `∂g²/∂φ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeRule {
    /// `(g²(φ+dφ) − g²(φ−dφ)) / 2dφ`.
    Central,
    /// `(g²(φ+dφ) − g²(φ)) / dφ`.
    OneSided,
    /// One-sided at mirror points, central elsewhere.
    #[default]
    Auto,
}

/// True when `g²` is an even function of `φ` around `cfg.phi`.
///
/// With feedback along `e^{iφ}`, complex conjugation maps the dynamics at
/// `arg α0 + δ` onto those at `arg α0 − δ`, so `φ − arg α0 ∈ {0, π}` are
/// stationary points of every φ-dependent statistic.
pub fn is_mirror_point(cfg: &SimConfig) -> bool {
    if cfg.feedback_direction.is_some() {
        return false;
    }
    let rel = (cfg.phi - cfg.alpha0.phase()).rem_euclid(PI);
    rel < 1e-9 || PI - rel < 1e-9
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseOptions {
    pub rule: SlopeRule,
    /// Reuse one master seed for all φ points.
    pub common_random_numbers: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseEstimate {
    pub phi: f64,
    pub step_t: usize,
    pub delta_phi: f64,
    /// `g²` at `φ`.
    pub signal: f64,
    pub signal_err: f64,
    pub slope: f64,
    pub slope_err: f64,
    pub rule: SlopeRule,
    pub n_conditional: usize,
    pub low_statistics: bool,
}

/// `Δφ = ΔM / |∂M/∂φ|` with `M = g²(t, 0)` estimated from fresh ensembles.
pub fn phase_uncertainty(
    cfg: &SimConfig,
    step_t: usize,
    dphi: f64,
    n_traj: usize,
    master_seed: u64,
    opts: PhaseOptions,
) -> Result<PhaseEstimate> {
    if !(dphi > 0.0 && dphi < PI) {
        return Err(Error::param("dphi", "must lie in (0, pi)"));
    }
    if step_t == 0 || step_t >= cfg.n_steps {
        return Err(Error::StepOutOfRange {
            step: step_t,
            n_steps: cfg.n_steps,
        });
    }
    let rule = match opts.rule {
        SlopeRule::Auto if is_mirror_point(cfg) => SlopeRule::OneSided,
        SlopeRule::Auto => SlopeRule::Central,
        r => r,
    };
    let seed_for = |i: u64| {
        if opts.common_random_numbers {
            master_seed
        } else {
            rng::split_seed(master_seed, i)
        }
    };
    let g2_at = |phi: f64, i: u64| -> Result<CorrelationEstimate> {
        let c = SimConfig {
            phi,
            record: RecordMode::Emissions,
            ..cfg.clone()
        };
        let ens = trajectory::run_ensemble(&c, n_traj, seed_for(i))?;
        estimate_g2(&ens, step_t)
    };

    let centre = g2_at(cfg.phi, 1)?;
    let plus = g2_at(cfg.phi + dphi, 2)?;
    let (slope, slope_err) = match rule {
        SlopeRule::OneSided => (
            (plus.g2 - centre.g2) / dphi,
            plus.std_err.hypot(centre.std_err) / dphi,
        ),
        _ => {
            let minus = g2_at(cfg.phi - dphi, 0)?;
            (
                (plus.g2 - minus.g2) / (2.0 * dphi),
                plus.std_err.hypot(minus.std_err) / (2.0 * dphi),
            )
        }
    };
    if !(slope.abs() >= 10.0 * slope_err) {
        return Err(Error::Uninformative { slope, slope_err });
    }
    Ok(PhaseEstimate {
        phi: cfg.phi,
        step_t,
        delta_phi: centre.std_err / slope.abs(),
        signal: centre.g2,
        signal_err: centre.std_err,
        slope,
        slope_err,
        rule,
        n_conditional: centre.n_conditional,
        low_statistics: centre.low_statistics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingPoint {
    pub n: usize,
    pub delta_phi: f64,
    pub signal: f64,
    pub slope: f64,
}

/// Least-squares fit of `log Δφ = exponent · log N + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub points: Vec<ScalingPoint>,
    pub exponent: f64,
    pub exponent_err: f64,
    pub intercept: f64,
}

impl ScalingFit {
    /// Exponent below the shot-noise value −1/2 by at least two standard errors.
    pub fn surpasses_sql(&self) -> bool {
        self.exponent + 2.0 * self.exponent_err < -0.5
    }
}

/// Ordinary least squares on `(ln x, ln y)`; returns (slope, slope error, intercept).
pub fn fit_power_law(xy: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if xy.len() < 3 {
        return Err(Error::InvalidScan("at least three points are needed for a fit with an error".into()));
    }
    if xy.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::InvalidScan("power-law fit needs positive finite data".into()));
    }
    let n = xy.len() as f64;
    let lx: Vec<f64> = xy.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = xy.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidScan("all abscissae are equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let err = (ssr / (n - 2.0) / sxx).sqrt();
    Ok((slope, err, intercept))
}

/// Checks the step-count list of a scaling scan: at least four distinct
/// values, the largest at least ten times the smallest.
pub fn validate_scan(n_list: &[usize]) -> Result<()> {
    let mut v = n_list.to_vec();
    v.sort_unstable();
    v.dedup();
    if v.len() < 4 {
        return Err(Error::InvalidScan(format!("need at least 4 distinct N values, got {}", v.len())));
    }
    if v[0] == 0 {
        return Err(Error::InvalidScan("N must be positive".into()));
    }
    if v[v.len() - 1] < 10 * v[0] {
        return Err(Error::InvalidScan("N values must span at least one decade".into()));
    }
    Ok(())
}

/// Phase uncertainty at each `N` (measurement time `N·Δt`) and a power-law fit.
pub fn fit_scaling(
    cfg_base: &SimConfig,
    n_list: &[usize],
    dphi: f64,
    n_traj: usize,
    master_seed: u64,
    opts: PhaseOptions,
) -> Result<ScalingFit> {
    validate_scan(n_list)?;
    let mut points = Vec::with_capacity(n_list.len());
    for (i, &n) in n_list.iter().enumerate() {
        let cfg = cfg_base.with_steps(n + 1);
        let est = phase_uncertainty(&cfg, n, dphi, n_traj, rng::split_seed(master_seed, i as u64), opts)?;
        log::info!("N = {n}: delta_phi = {:.4e} (g2 = {:.3e})", est.delta_phi, est.signal);
        points.push(ScalingPoint {
            n,
            delta_phi: est.delta_phi,
            signal: est.signal,
            slope: est.slope,
        });
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.n as f64, p.delta_phi)).collect();
    let (exponent, exponent_err, intercept) = fit_power_law(&xy)?;
    Ok(ScalingFit {
        points,
        exponent,
        exponent_err,
        intercept,
    })
}
