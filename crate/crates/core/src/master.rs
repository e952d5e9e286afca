//! Lindblad master equation on the truncated Fock space.
//!
//! `dρ/dt = −i[H, ρ] + κ(LρL† − ½{L†L, ρ})`, integrated either by an
//! adaptive Dormand–Prince 5(4) pair or, for small dimensions, by
//! exponentiating the superoperator. With feedback the jump operator is
//! `R(φ)c` and nothing else changes.

use std::io::{self, Write};

use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::{DecayRate, FeedbackRule};
use crate::error::{Error, Result};
use crate::fock::{self, FockOperator, PureState, TruncationDim};
use crate::linalg::{self, CMatrix, CVector, I};
use crate::trajectory::{self, EnsembleRecord, SimConfig};

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-8;
/// Most negative eigenvalue that is clipped rather than rejected.
pub const NEGATIVITY_TOL: f64 = 1e-8;
// Negative eigenvalues above this are rounding noise and left alone.
const CLIP_FLOOR: f64 = 1e-13;
// Clips smaller than this are routine integrator noise and logged at debug level.
const QUIET_CLIP: f64 = 1e-9;
/// Largest dimension accepted by [`EvolveMethod::Superoperator`].
pub const SUPEROPERATOR_MAX_DIM: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
    dim: TruncationDim,
}

impl DensityMatrix {
    /// Validates `matrix`, clipping eigenvalues in `(−1e-8, 0)` to zero.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                left: matrix.nrows(),
                right: matrix.ncols(),
            });
        }
        let dim = TruncationDim::new(matrix.nrows())?;
        let herm = linalg::hermiticity_defect(&matrix);
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidDensity(format!("Hermiticity defect {herm:e}")));
        }
        let tr = trace(&matrix);
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidDensity(format!("trace {tr}")));
        }
        let sym = (&matrix + matrix.adjoint()) * linalg::re(0.5);
        let eig = nalgebra::SymmetricEigen::new(sym.clone());
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -NEGATIVITY_TOL {
            return Err(Error::InvalidDensity(format!("eigenvalue {min:e}")));
        }
        if min < -CLIP_FLOOR {
            if min < -QUIET_CLIP {
                log::warn!("clipping density-matrix eigenvalue {min:e}");
            } else {
                log::debug!("clipping density-matrix eigenvalue {min:e}");
            }
            let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&x| x.max(0.0)).collect();
            let total: f64 = clipped.iter().sum();
            let diag = CVector::from_iterator(clipped.len(), clipped.iter().map(|&x| linalg::re(x / total)));
            let repaired = &eig.eigenvectors * CMatrix::from_diagonal(&diag) * eig.eigenvectors.adjoint();
            return Ok(Self { matrix: repaired, dim });
        }
        Ok(Self { matrix: sym, dim })
    }

    pub fn from_pure(psi: &PureState) -> Self {
        let v = psi.amplitudes();
        Self {
            matrix: v * v.adjoint(),
            dim: psi.dim(),
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> TruncationDim {
        self.dim
    }

    pub fn trace(&self) -> Complex64 {
        trace(&self.matrix)
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    /// `tr(Aρ)`. Panics on a dimension mismatch.
    pub fn expectation(&self, op: &FockOperator) -> Complex64 {
        assert_eq!(op.dim(), self.dim, "operator and state dimensions differ");
        let a = op.matrix();
        let n = self.dim.get();
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                acc += a[(i, j)] * self.matrix[(j, i)];
            }
        }
        acc
    }

    pub fn mean_photon_number(&self) -> f64 {
        (0..self.dim.get()).map(|n| n as f64 * self.matrix[(n, n)].re).sum()
    }

    pub fn top_population(&self) -> f64 {
        let n = self.dim.get() - 1;
        self.matrix[(n, n)].re
    }
}

fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

#[derive(Debug, Clone)]
pub struct LindbladGenerator {
    h: FockOperator,
    lindblad: FockOperator,
    rate: DecayRate,
    l_adj: CMatrix,
    ldl: CMatrix,
    h_is_zero: bool,
}

impl LindbladGenerator {
    pub fn new(h: FockOperator, lindblad: FockOperator, rate: DecayRate) -> Result<Self> {
        h.dim().check_eq(lindblad.dim())?;
        if !h.is_hermitian() {
            return Err(Error::NotHermitian(linalg::hermiticity_defect(h.matrix())));
        }
        let l_adj = lindblad.matrix().adjoint();
        let ldl = &l_adj * lindblad.matrix();
        let h_is_zero = h.matrix().iter().all(|z| *z == Complex64::new(0.0, 0.0));
        Ok(Self {
            h,
            lindblad,
            rate,
            l_adj,
            ldl,
            h_is_zero,
        })
    }

    /// Measurement-stage generator of `cfg`: `H = 0` and `L = c`, or
    /// `L = D(β)c` when feedback is on.
    pub fn for_config(cfg: &SimConfig) -> Result<Self> {
        let d = cfg.dim;
        let c = fock::annihilation_op(d);
        let l = if cfg.has_feedback() {
            FeedbackRule::from_amplitude(cfg.feedback_beta(), d).modified_lindblad(&c)?
        } else {
            c
        };
        Self::new(FockOperator::zero(d), l, cfg.kappa)
    }

    pub fn h(&self) -> &FockOperator {
        &self.h
    }

    pub fn lindblad(&self) -> &FockOperator {
        &self.lindblad
    }

    pub fn rate(&self) -> DecayRate {
        self.rate
    }

    pub fn dim(&self) -> TruncationDim {
        self.h.dim()
    }

    fn rhs_matrix(&self, rho: &CMatrix) -> CMatrix {
        let k = self.rate.get();
        let l = self.lindblad.matrix();
        let mut out = l * rho * &self.l_adj;
        let anti = &self.ldl * rho;
        out -= (&anti + anti.adjoint()) * linalg::re(0.5);
        out *= linalg::re(k);
        if !self.h_is_zero {
            let hr = self.h.matrix() * rho;
            out -= (&hr - hr.adjoint()) * I;
        }
        out
    }

    /// Column-major superoperator: `vec(dρ/dt) = S · vec(ρ)`.
    pub fn superoperator(&self) -> CMatrix {
        let n = self.dim().get();
        let id = CMatrix::identity(n, n);
        let h = self.h.matrix();
        let l = self.lindblad.matrix();
        let k = linalg::re(self.rate.get());
        let mut s = (id.kronecker(h) - h.transpose().kronecker(&id)) * (-I);
        s += l.conjugate().kronecker(l) * k;
        s -= (id.kronecker(&self.ldl) + self.ldl.transpose().kronecker(&id)) * (k * 0.5);
        s
    }
}

/// Right-hand side of the master equation.
pub fn lindblad_rhs(gen: &LindbladGenerator, rho: &DensityMatrix) -> Result<CMatrix> {
    gen.dim().check_eq(rho.dim())?;
    Ok(gen.rhs_matrix(rho.matrix()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvolveMethod {
    /// Adaptive Dormand–Prince 5(4) with mixed error control.
    DormandPrince { rtol: f64, atol: f64 },
    /// `exp(S t)` on the vectorized state; dimension at most 60.
    Superoperator,
}

impl Default for EvolveMethod {
    fn default() -> Self {
        EvolveMethod::DormandPrince {
            rtol: 1e-10,
            atol: 1e-12,
        }
    }
}

pub fn evolve_density(
    gen: &LindbladGenerator,
    rho0: &DensityMatrix,
    t: f64,
    method: EvolveMethod,
) -> Result<DensityMatrix> {
    let mut v = evolve_density_series(gen, rho0, &[t], method)?;
    Ok(v.pop().expect("one time requested"))
}

/// States at each of `times`, which must be finite, non-negative and
/// non-decreasing. Every output is re-validated.
pub fn evolve_density_series(
    gen: &LindbladGenerator,
    rho0: &DensityMatrix,
    times: &[f64],
    method: EvolveMethod,
) -> Result<Vec<DensityMatrix>> {
    gen.dim().check_eq(rho0.dim())?;
    let mut prev = 0.0;
    for &t in times {
        if !(t.is_finite() && t >= prev) {
            return Err(Error::param("times", "must be finite, non-negative and non-decreasing"));
        }
        prev = t;
    }
    let raw = match method {
        EvolveMethod::DormandPrince { rtol, atol } => {
            if !(rtol > 0.0 && atol > 0.0) {
                return Err(Error::param("tolerance", "rtol and atol must be positive"));
            }
            dormand_prince(gen, rho0.matrix(), times, rtol, atol)?
        }
        EvolveMethod::Superoperator => superoperator_series(gen, rho0.matrix(), times)?,
    };
    raw.into_iter()
        .zip(times)
        .map(|(m, &t)| {
            if t == 0.0 {
                Ok(rho0.clone())
            } else {
                DensityMatrix::new(m).map_err(|e| Error::Integrator(e.to_string()))
            }
        })
        .collect()
}

fn superoperator_series(gen: &LindbladGenerator, rho0: &CMatrix, times: &[f64]) -> Result<Vec<CMatrix>> {
    let n = gen.dim().get();
    if n > SUPEROPERATOR_MAX_DIM {
        return Err(Error::param("dim", format!("superoperator mode supports dim <= {SUPEROPERATOR_MAX_DIM}")));
    }
    let s = gen.superoperator();
    let v0 = CVector::from_column_slice(rho0.as_slice());
    Ok(times
        .iter()
        .map(|&t| {
            if t == 0.0 {
                return rho0.clone();
            }
            let v = linalg::expm(&(&s * linalg::re(t))) * &v0;
            CMatrix::from_column_slice(n, n, v.as_slice())
        })
        .collect())
}

// Dormand–Prince 5(4) tableau. The generator is time independent, so the
// node coefficients are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const MAX_STEPS: usize = 10_000_000;

fn dormand_prince(gen: &LindbladGenerator, rho0: &CMatrix, times: &[f64], rtol: f64, atol: f64) -> Result<Vec<CMatrix>> {
    let mut out = Vec::with_capacity(times.len());
    let mut y = rho0.clone();
    let mut t = 0.0;
    let mut k1 = gen.rhs_matrix(&y);
    let scale = linalg::max_abs(&k1).max(1e-12);
    let mut h = (0.01 / scale).min(0.1);
    let mut steps = 0usize;

    for &target in times {
        while t < target {
            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::Integrator("step limit exceeded".into()));
            }
            let remaining = target - t;
            let last = h >= remaining;
            let hh = if last { remaining } else { h };

            let mut ks: Vec<CMatrix> = Vec::with_capacity(7);
            ks.push(k1.clone());
            for (i, row) in A.iter().enumerate().skip(1) {
                let mut yi = y.clone();
                for (j, &a) in row.iter().enumerate().take(i) {
                    if a != 0.0 {
                        yi += &ks[j] * linalg::re(hh * a);
                    }
                }
                if i == 6 {
                    // Stage 7 is evaluated at the fifth-order solution.
                    let k7 = gen.rhs_matrix(&yi);
                    ks.push(k7);
                    let mut err = CMatrix::zeros(y.nrows(), y.ncols());
                    for (k, &e) in ks.iter().zip(&E) {
                        if e != 0.0 {
                            err += k * linalg::re(hh * e);
                        }
                    }
                    let mut acc = 0.0;
                    for ((e, a), b) in err.iter().zip(y.iter()).zip(yi.iter()) {
                        let sc = atol + rtol * a.norm().max(b.norm());
                        acc += (e.norm() / sc).powi(2);
                    }
                    let err_norm = (acc / err.len() as f64).sqrt();
                    if !err_norm.is_finite() {
                        return Err(Error::Integrator("non-finite error estimate".into()));
                    }
                    let accepted = err_norm <= 1.0;
                    if accepted {
                        t = if last { target } else { t + hh };
                        // The exact flow preserves Hermiticity; remove the drift.
                        y = (&yi + yi.adjoint()) * linalg::re(0.5);
                        ks.pop();
                        k1 = gen.rhs_matrix(&y);
                    }
                    let factor = if err_norm == 0.0 {
                        5.0
                    } else {
                        (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
                    };
                    let proposed = hh * factor;
                    // A clipped final step says little about the natural size.
                    h = if last && accepted { proposed.max(h) } else { proposed };
                    if h < 1e-14 * target.max(1.0) {
                        return Err(Error::Integrator(format!("step size underflow at t = {t}")));
                    }
                    break;
                }
                ks.push(gen.rhs_matrix(&yi));
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// Scalar quantities compared between trajectories and the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    PhotonNumber,
    FieldReal,
    FieldImag,
}

impl Observable {
    pub const ALL: [Observable; 3] = [Observable::PhotonNumber, Observable::FieldReal, Observable::FieldImag];

    pub fn label(self) -> &'static str {
        match self {
            Observable::PhotonNumber => "n",
            Observable::FieldReal => "re_c",
            Observable::FieldImag => "im_c",
        }
    }

    pub fn of_density(self, rho: &DensityMatrix) -> f64 {
        match self {
            Observable::PhotonNumber => rho.mean_photon_number(),
            Observable::FieldReal => rho.expectation(&fock::annihilation_op(rho.dim())).re,
            Observable::FieldImag => rho.expectation(&fock::annihilation_op(rho.dim())).im,
        }
    }

    fn of_pure(self, psi: &PureState) -> f64 {
        match self {
            Observable::PhotonNumber => psi.mean_photon_number(),
            Observable::FieldReal => fock::field_amplitude(psi).re,
            Observable::FieldImag => fock::field_amplitude(psi).im,
        }
    }
}

/// Deterministic error floor combined in quadrature with the sampling
/// error, covering integrator tolerance.
pub const ORACLE_TOL: f64 = 1e-8;
pub const Z_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceRow {
    pub observable: Observable,
    pub t: f64,
    pub ensemble_mean: f64,
    pub oracle: f64,
    pub std_err: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub rows: Vec<EquivalenceRow>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.z.abs() < Z_THRESHOLD)
    }

    pub fn max_abs_z(&self) -> f64 {
        self.rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "observable,t,ensemble_mean,oracle,std_err,z")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.observable.label(),
                crate::csv_float(r.t),
                crate::csv_float(r.ensemble_mean),
                crate::csv_float(r.oracle),
                crate::csv_float(r.std_err),
                crate::csv_float(r.z)
            )?;
        }
        Ok(())
    }
}

/// Index of the step ending at `t`, or `None` for `t = 0`.
fn step_for_time(cfg: &SimConfig, t: f64) -> Result<Option<usize>> {
    if t == 0.0 {
        return Ok(None);
    }
    let k = (t / cfg.dt).round();
    if !(t > 0.0 && k >= 1.0 && (k * cfg.dt - t).abs() <= 1e-9 * t.max(1.0)) {
        return Err(Error::param("times", format!("{t} is not a positive multiple of dt")));
    }
    let k = k as usize;
    if k > cfg.n_steps {
        return Err(Error::StepOutOfRange {
            step: k - 1,
            n_steps: cfg.n_steps,
        });
    }
    Ok(Some(k - 1))
}

/// Compares ensemble means against the oracle at each `(observable, t)`.
pub fn equivalence_check(
    ensemble: &EnsembleRecord,
    gen: &LindbladGenerator,
    observables: &[Observable],
    times: &[f64],
) -> Result<EquivalenceReport> {
    let cfg = &ensemble.config;
    let expected = LindbladGenerator::for_config(cfg)?;
    if gen.dim() != cfg.dim {
        return Err(Error::ConfigMismatch(format!(
            "oracle dim {} vs ensemble dim {}",
            gen.dim().get(),
            cfg.dim.get()
        )));
    }
    if gen.rate() != cfg.kappa {
        return Err(Error::ConfigMismatch("decay rates differ".into()));
    }
    if linalg::max_abs_diff(gen.lindblad().matrix(), expected.lindblad().matrix()) > 1e-12 {
        return Err(Error::ConfigMismatch("Lindblad operator does not match the feedback setting".into()));
    }
    if !gen.h_is_zero {
        return Err(Error::ConfigMismatch("measurement stage requires H = 0".into()));
    }
    if observables.is_empty() || times.is_empty() {
        return Ok(EquivalenceReport { rows: Vec::new() });
    }
    if ensemble.records.is_empty() {
        return Err(Error::param("ensemble", "no recorded trajectories"));
    }

    let steps: Vec<Option<usize>> = times.iter().map(|&t| step_for_time(cfg, t)).collect::<Result<_>>()?;
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let psi0 = trajectory::prepare_initial_state(&SimConfig {
        leakage_budget: None,
        ..cfg.clone()
    })?;
    let rho0 = DensityMatrix::from_pure(&psi0);
    let states = evolve_density_series(gen, &rho0, &sorted, EvolveMethod::default())?;

    let mut rows = Vec::with_capacity(observables.len() * times.len());
    for &obs in observables {
        for (&t, step) in times.iter().zip(&steps) {
            let idx = sorted.iter().position(|&s| s == t).expect("time present");
            let oracle = obs.of_density(&states[idx]);
            let (mean, se) = match step {
                None => (obs.of_pure(&psi0), 0.0),
                Some(k) => sample_stats(ensemble, obs, *k)?,
            };
            let z = (mean - oracle) / (se * se + ORACLE_TOL * ORACLE_TOL).sqrt();
            rows.push(EquivalenceRow {
                observable: obs,
                t,
                ensemble_mean: mean,
                oracle,
                std_err: se,
                z,
            });
        }
    }
    Ok(EquivalenceReport { rows })
}

fn sample_stats(ens: &EnsembleRecord, obs: Observable, k: usize) -> Result<(f64, f64)> {
    let mut values = Vec::with_capacity(ens.records.len());
    for rec in &ens.records {
        let v = match obs {
            Observable::PhotonNumber => *rec.n_trace.get(k).ok_or(Error::MissingTrace("n_trace"))?,
            Observable::FieldReal => rec.amp_trace.get(k).ok_or(Error::MissingTrace("amp_trace"))?.re,
            Observable::FieldImag => rec.amp_trace.get(k).ok_or(Error::MissingTrace("amp_trace"))?.im,
        };
        values.push(v);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok((mean, (var / n).sqrt()))
}

/// Long-format CSV of oracle curves: `t,observable,value`.
pub fn write_oracle_curves<W: Write>(
    mut w: W,
    times: &[f64],
    states: &[DensityMatrix],
    observables: &[Observable],
) -> io::Result<()> {
    writeln!(w, "t,observable,value")?;
    for (t, rho) in times.iter().zip(states) {
        for obs in observables {
            writeln!(w, "{},{},{}", crate::csv_float(*t), obs.label(), crate::csv_float(obs.of_density(rho)))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{make_coherent_state, make_number_basis_state, vacuum, CoherentAmplitude};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn decay_gen(d: usize) -> LindbladGenerator {
        let d = TruncationDim::new(d).unwrap();
        LindbladGenerator::new(FockOperator::zero(d), fock::annihilation_op(d), DecayRate::new(1.0).unwrap()).unwrap()
    }

    fn random_density(d: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
        let g = CMatrix::from_fn(d, d, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let m = &g * g.adjoint();
        let tr = trace(&m);
        DensityMatrix::new(m / tr).unwrap()
    }

    fn feedback_gen(d: usize) -> LindbladGenerator {
        let dd = TruncationDim::new(d).unwrap();
        let fb = FeedbackRule::from_amplitude(CoherentAmplitude::new(0.7, 1.1).unwrap(), dd);
        let l = fb.modified_lindblad(&fock::annihilation_op(dd)).unwrap();
        let h = FockOperator::hermitian(fock::number_op(dd).matrix() * linalg::re(0.3)).unwrap();
        LindbladGenerator::new(h, l, DecayRate::new(1.0).unwrap()).unwrap()
    }

    #[test]
    fn density_validation() {
        let d = TruncationDim::new(3).unwrap();
        assert!(DensityMatrix::new(CMatrix::identity(3, 3)).is_err());
        let mut m = CMatrix::zeros(3, 3);
        m[(0, 0)] = linalg::re(1.0 + 5e-9);
        m[(1, 1)] = linalg::re(-5e-9);
        let repaired = DensityMatrix::new(m).unwrap();
        assert!(repaired.matrix()[(1, 1)].re >= -1e-15);
        assert!((repaired.trace().re - 1.0).abs() < 1e-14);
        let mut bad = CMatrix::zeros(3, 3);
        bad[(0, 0)] = linalg::re(1.1);
        bad[(1, 1)] = linalg::re(-0.1);
        assert!(DensityMatrix::new(bad).is_err());
        assert_eq!(DensityMatrix::from_pure(&vacuum(d)).purity(), 1.0);
    }

    #[test]
    fn rhs_examples() {
        let gen = decay_gen(6);
        let d = gen.dim();
        let vac = DensityMatrix::from_pure(&vacuum(d));
        assert_eq!(linalg::max_abs(&lindblad_rhs(&gen, &vac).unwrap()), 0.0);

        let one = DensityMatrix::from_pure(&make_number_basis_state(1, d).unwrap());
        let rhs = lindblad_rhs(&gen, &one).unwrap();
        let dn: Complex64 = (fock::number_op(d).matrix() * &rhs).trace();
        assert!((dn.re + 1.0).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fgen = feedback_gen(6);
        for _ in 0..5 {
            let rho = random_density(6, &mut rng);
            let r = lindblad_rhs(&fgen, &rho).unwrap();
            assert!(trace(&r).norm() < 1e-10);
            assert!(linalg::hermiticity_defect(&r) < 1e-10);
        }
        assert!(lindblad_rhs(&decay_gen(5), &one).is_err());
    }

    #[test]
    fn superoperator_matches_rhs() {
        let gen = feedback_gen(5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho = random_density(5, &mut rng);
        let direct = lindblad_rhs(&gen, &rho).unwrap();
        let v = gen.superoperator() * CVector::from_column_slice(rho.matrix().as_slice());
        let via = CMatrix::from_column_slice(5, 5, v.as_slice());
        assert!(linalg::max_abs_diff(&direct, &via) < 1e-13);
    }

    #[test]
    fn coherent_decay_both_methods() {
        let gen = decay_gen(20);
        let psi = make_coherent_state(CoherentAmplitude::new(1.0, 0.0).unwrap(), gen.dim()).state;
        let rho0 = DensityMatrix::from_pure(&psi);
        assert_eq!(evolve_density(&gen, &rho0, 0.0, EvolveMethod::default()).unwrap(), rho0);
        for method in [EvolveMethod::default(), EvolveMethod::Superoperator] {
            let rho = evolve_density(&gen, &rho0, 1.0, method).unwrap();
            assert!((rho.mean_photon_number() - (-1.0f64).exp()).abs() < 1e-6);
            let c = Observable::FieldReal.of_density(&rho);
            assert!((c - (-0.5f64).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn methods_agree_with_feedback_and_hamiltonian() {
        let gen = feedback_gen(8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho0 = random_density(8, &mut rng);
        let a = evolve_density(&gen, &rho0, 1.3, EvolveMethod::default()).unwrap();
        let b = evolve_density(&gen, &rho0, 1.3, EvolveMethod::Superoperator).unwrap();
        assert!(linalg::max_abs_diff(a.matrix(), b.matrix()) < 1e-8);
    }

    #[test]
    fn semigroup_and_linearity() {
        let gen = feedback_gen(7);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let r1 = random_density(7, &mut rng);
        let r2 = random_density(7, &mut rng);
        let m = EvolveMethod::default();

        let full = evolve_density(&gen, &r1, 1.5, m).unwrap();
        let half = evolve_density(&gen, &evolve_density(&gen, &r1, 0.6, m).unwrap(), 0.9, m).unwrap();
        assert!(linalg::max_abs_diff(full.matrix(), half.matrix()) < 1e-8);

        let a = 0.3;
        let mix = DensityMatrix::new(r1.matrix() * linalg::re(a) + r2.matrix() * linalg::re(1.0 - a)).unwrap();
        let lhs = evolve_density(&gen, &mix, 1.0, m).unwrap();
        let e1 = evolve_density(&gen, &r1, 1.0, m).unwrap();
        let e2 = evolve_density(&gen, &r2, 1.0, m).unwrap();
        let rhs = e1.matrix() * linalg::re(a) + e2.matrix() * linalg::re(1.0 - a);
        assert!(linalg::max_abs_diff(lhs.matrix(), &rhs) < 1e-8);
    }

    #[test]
    fn series_rejects_decreasing_times() {
        let gen = decay_gen(4);
        let rho0 = DensityMatrix::from_pure(&vacuum(gen.dim()));
        assert!(evolve_density_series(&gen, &rho0, &[1.0, 0.5], EvolveMethod::default()).is_err());
        assert!(evolve_density(&gen, &rho0, -1.0, EvolveMethod::default()).is_err());
    }

    #[test]
    fn feedback_generator_uses_displaced_jump() {
        let cfg = SimConfig::fig3(0.5);
        let gen = LindbladGenerator::for_config(&cfg).unwrap();
        let d = cfg.dim;
        let expected = fock::displacement_op(cfg.feedback_beta(), d).matrix() * fock::annihilation_op(d).matrix();
        assert!(linalg::max_abs_diff(gen.lindblad().matrix(), &expected) < 1e-14);
    }

    #[test]
    fn empty_observables_give_empty_passing_report() {
        let cfg = SimConfig {
            feedback_magnitude: 0.0,
            n_steps: 5,
            ..SimConfig::fig3(0.0)
        };
        let ens = trajectory::run_ensemble(&cfg, 3, 1).unwrap();
        let gen = LindbladGenerator::for_config(&cfg).unwrap();
        let rep = equivalence_check(&ens, &gen, &[], &[0.01]).unwrap();
        assert!(rep.rows.is_empty() && rep.passed());

        let wrong = LindbladGenerator::for_config(&SimConfig::fig3(0.0)).unwrap();
        assert!(matches!(
            equivalence_check(&ens, &wrong, &Observable::ALL, &[0.01]),
            Err(Error::ConfigMismatch(_))
        ));
        assert!(equivalence_check(&ens, &gen, &Observable::ALL, &[0.015]).is_err());
    }
}
