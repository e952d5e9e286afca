//! Conditional (no-emission) evolution, the reset operator, and feedback.
//!
//! Between detections the state evolves under `K0 = exp(−i H_cond Δt)` with
//! `H_cond = H − (i/2) κ L†L`. A detection applies `L` (the `(κΔt)^{1/2}`
//! prefactor of the reset operator cancels under normalization), optionally
//! followed by the feedback unitary `R(φ)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, CoherentAmplitude, FockOperator, PureState, TruncationDim};
use crate::linalg::{self, CMatrix, CVector, I};

/// Cavity decay rate κ (inverse time units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DecayRate(f64);

impl DecayRate {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::param("kappa", format!("must be positive, got {kappa}")));
        }
        Ok(Self(kappa))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for DecayRate {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DecayRate> for f64 {
    fn from(r: DecayRate) -> f64 {
        r.0
    }
}

/// Largest κΔt not flagged as coarse.
pub const FINE_STEP_LIMIT: f64 = 0.1;

/// Length Δt of one measurement interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeStep {
    dt: f64,
    fine: bool,
}

impl TimeStep {
    pub fn new(dt: f64, rate: DecayRate) -> Result<Self> {
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(Error::param("dt", format!("must be non-negative, got {dt}")));
        }
        Ok(Self {
            dt,
            fine: rate.get() * dt <= FINE_STEP_LIMIT,
        })
    }

    pub fn get(self) -> f64 {
        self.dt
    }

    /// `κΔt ≤ 0.1`.
    pub fn is_fine(self) -> bool {
        self.fine
    }
}

/// `H`, `L`, κ and the derived non-Hermitian `H_cond = H − (i/2)κ L†L`.
#[derive(Debug, Clone)]
pub struct ConditionalGenerator {
    h: FockOperator,
    lindblad: FockOperator,
    rate: DecayRate,
    jump_weight: FockOperator,
    h_cond: FockOperator,
    // Diagonal of L†L when it is exactly diagonal (e.g. L = c).
    weight_diag: Option<Vec<f64>>,
}

pub fn build_conditional_generator(
    h: FockOperator,
    l: FockOperator,
    rate: DecayRate,
) -> Result<ConditionalGenerator> {
    h.dim().check_eq(l.dim())?;
    if !h.is_hermitian() {
        return Err(Error::NotHermitian(linalg::hermiticity_defect(h.matrix())));
    }
    let ldl = l.matrix().adjoint() * l.matrix();
    let h_cond = h.matrix() - &ldl * (I * (0.5 * rate.get()));
    let weight_diag = linalg::exact_diagonal(&ldl).map(|d| d.iter().map(|z| z.re).collect());
    Ok(ConditionalGenerator {
        jump_weight: FockOperator::hermitian(ldl)?,
        h_cond: FockOperator::general(h_cond)?,
        h,
        lindblad: l,
        rate,
        weight_diag,
    })
}

impl ConditionalGenerator {
    pub fn h(&self) -> &FockOperator {
        &self.h
    }

    pub fn lindblad(&self) -> &FockOperator {
        &self.lindblad
    }

    pub fn rate(&self) -> DecayRate {
        self.rate
    }

    pub fn h_cond(&self) -> &FockOperator {
        &self.h_cond
    }

    /// `L†L`.
    pub fn jump_weight(&self) -> &FockOperator {
        &self.jump_weight
    }

    pub fn dim(&self) -> TruncationDim {
        self.h.dim()
    }

    /// `⟨ψ|L†L|ψ⟩`.
    pub fn mean_jump_weight(&self, psi: &PureState) -> Result<f64> {
        self.dim().check_eq(psi.dim())?;
        Ok(match &self.weight_diag {
            Some(w) => psi
                .amplitudes()
                .iter()
                .zip(w)
                .map(|(a, w)| a.norm_sqr() * w)
                .sum(),
            None => fock::expectation(&self.jump_weight, psi)?.re,
        })
    }
}

/// The no-jump propagator `K0`, kept in diagonal form when possible.
#[derive(Debug, Clone)]
pub struct Propagator {
    op: FockOperator,
    diag: Option<Vec<Complex64>>,
}

impl Propagator {
    pub fn operator(&self) -> &FockOperator {
        &self.op
    }

    pub fn dim(&self) -> TruncationDim {
        self.op.dim()
    }

    /// Unnormalized `K0|ψ⟩`.
    pub fn apply(&self, psi: &PureState) -> Result<CVector> {
        self.dim().check_eq(psi.dim())?;
        Ok(match &self.diag {
            Some(d) => CVector::from_iterator(
                d.len(),
                psi.amplitudes().iter().zip(d).map(|(a, k)| a * k),
            ),
            None => self.op.matrix() * psi.amplitudes(),
        })
    }
}

/// `K0 = exp(−i H_cond Δt)`.
pub fn no_jump_propagator(g: &ConditionalGenerator, dt: TimeStep) -> Propagator {
    let arg = g.h_cond.matrix() * (-I * dt.get());
    let diag = linalg::exact_diagonal(&arg).map(|d| d.into_iter().map(|z| z.exp()).collect::<Vec<_>>());
    let matrix = match &diag {
        Some(d) => CMatrix::from_diagonal(&CVector::from_vec(d.clone())),
        None => linalg::expm(&arg),
    };
    Propagator {
        op: FockOperator::general(matrix).expect("square by construction"),
        diag,
    }
}

/// Smallest `‖K0ψ‖` accepted by [`apply_no_jump`].
pub const MIN_SURVIVAL_NORM: f64 = 1e-14;

/// Returns `K0ψ/‖K0ψ‖` and the survival probability `‖K0ψ‖²`.
pub fn apply_no_jump(k0: &Propagator, psi: &PureState) -> Result<(PureState, f64)> {
    let v = k0.apply(psi)?;
    let norm = v.norm();
    if !(norm >= MIN_SURVIVAL_NORM) {
        return Err(Error::VanishingNorm(norm));
    }
    Ok((
        PureState::from_normalized(v / Complex64::new(norm, 0.0), psi.dim()),
        norm * norm,
    ))
}

/// First-order emission probability `κ Δt ⟨L†L⟩`.
pub fn jump_probability(g: &ConditionalGenerator, psi: &PureState, dt: TimeStep) -> Result<f64> {
    let p = g.rate.get() * dt.get() * g.mean_jump_weight(psi)?;
    if p > 1.0 + 1e-12 {
        return Err(Error::CoarseStep(p));
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Detection-triggered displacement `R(φ) = D(β)`.
#[derive(Debug, Clone)]
pub struct FeedbackRule {
    beta: CoherentAmplitude,
    r_op: FockOperator,
}

impl FeedbackRule {
    pub fn from_amplitude(beta: CoherentAmplitude, d: TruncationDim) -> Self {
        Self {
            beta,
            r_op: fock::displacement_op(beta, d),
        }
    }

    pub fn beta(&self) -> CoherentAmplitude {
        self.beta
    }

    pub fn r_op(&self) -> &FockOperator {
        &self.r_op
    }

    /// The feedback-modified Lindblad operator `R(φ)L`.
    pub fn modified_lindblad(&self, l: &FockOperator) -> Result<FockOperator> {
        let m = self.r_op.compose(l)?;
        FockOperator::general(m.matrix().clone())
    }
}

/// `β = magnitude · e^{iφ}`.
pub fn make_feedback_rule(phi: f64, magnitude: f64, d: TruncationDim) -> Result<FeedbackRule> {
    let beta = CoherentAmplitude::new(magnitude, phi)?;
    Ok(FeedbackRule::from_amplitude(beta, d))
}

/// Norm below which `Lψ` is treated as a dark state.
pub const MIN_JUMP_NORM: f64 = 1e-14;

/// `Lψ/‖Lψ‖`, or `R Lψ/‖R Lψ‖` with feedback.
pub fn apply_jump(g: &ConditionalGenerator, fb: Option<&FeedbackRule>, psi: &PureState) -> Result<PureState> {
    let lpsi = g.lindblad.apply(psi)?;
    let norm = lpsi.norm();
    if !(norm > MIN_JUMP_NORM) {
        return Err(Error::DarkStateJump(norm));
    }
    let out = match fb {
        Some(rule) => {
            rule.r_op.dim().check_eq(psi.dim())?;
            rule.r_op.matrix() * lpsi
        }
        None => lpsi,
    };
    PureState::from_amplitudes(out)
}
