//! Truncated single-mode bosonic Hilbert space.
//!
//! States and operators live on Fock levels `0..dim`. Everything here is an
//! immutable value; operations return new states.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};

/// Number of retained Fock levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct TruncationDim(usize);

impl TruncationDim {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        Ok(Self(dim))
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }

    pub(crate) fn check_eq(self, other: TruncationDim) -> Result<()> {
        if self != other {
            return Err(Error::DimensionMismatch {
                left: self.0,
                right: other.0,
            });
        }
        Ok(())
    }
}

impl TryFrom<usize> for TruncationDim {
    type Error = Error;
    fn try_from(value: usize) -> Result<Self> {
        Self::new(value)
    }
}

impl From<TruncationDim> for usize {
    fn from(d: TruncationDim) -> usize {
        d.0
    }
}

/// Complex field amplitude in canonical polar form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherentAmplitude {
    modulus: f64,
    phase: f64,
}

impl CoherentAmplitude {
    pub const ZERO: CoherentAmplitude = CoherentAmplitude {
        modulus: 0.0,
        phase: 0.0,
    };

    /// Phase is wrapped into `[0, 2π)`; a zero modulus forces phase 0.
    pub fn new(modulus: f64, phase: f64) -> Result<Self> {
        if !(modulus.is_finite() && modulus >= 0.0) {
            return Err(Error::param("modulus", format!("must be finite and >= 0, got {modulus}")));
        }
        if !phase.is_finite() {
            return Err(Error::param("phase", "must be finite"));
        }
        if modulus == 0.0 {
            return Ok(Self::ZERO);
        }
        let mut p = phase.rem_euclid(TAU);
        if p >= TAU {
            p = 0.0;
        }
        Ok(Self { modulus, phase: p })
    }

    pub fn from_complex(z: Complex64) -> Self {
        let (r, theta) = z.to_polar();
        Self::new(r, theta).unwrap_or(Self::ZERO)
    }

    pub fn modulus(&self) -> f64 {
        self.modulus
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn to_complex(&self) -> Complex64 {
        Complex64::from_polar(self.modulus, self.phase)
    }
}

/// Normalized state vector over the truncated Fock basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amps: CVector,
    dim: TruncationDim,
}

impl PureState {
    /// Normalizes `amps`; fails on a zero vector.
    pub fn from_amplitudes(amps: CVector) -> Result<Self> {
        let dim = TruncationDim::new(amps.len())?;
        let norm = amps.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::VanishingNorm(norm));
        }
        Ok(Self {
            amps: amps / Complex64::new(norm, 0.0),
            dim,
        })
    }

    /// Wraps amplitudes that are already normalized by construction.
    pub(crate) fn from_normalized(amps: CVector, dim: TruncationDim) -> Self {
        debug_assert_eq!(amps.len(), dim.get());
        Self { amps, dim }
    }

    pub fn dim(&self) -> TruncationDim {
        self.dim
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    /// Population of the highest retained level.
    pub fn leakage(&self) -> f64 {
        self.amps[self.dim.get() - 1].norm_sqr()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `|<other|self>|^2`; insensitive to global phase.
    pub fn fidelity(&self, other: &PureState) -> Result<f64> {
        self.dim.check_eq(other.dim)?;
        Ok(other.amps.dotc(&self.amps).norm_sqr())
    }

    /// Expectation of `c†c`, computed from the populations.
    pub fn mean_photon_number(&self) -> f64 {
        self.amps
            .iter()
            .enumerate()
            .map(|(n, a)| n as f64 * a.norm_sqr())
            .sum()
    }
}

/// Label attached to an operator at construction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    Unitary,
    Hermitian,
    General,
}

const LABEL_TOL: f64 = 1e-10;

/// Dense operator on the truncated Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    matrix: CMatrix,
    dim: TruncationDim,
    kind: OperatorKind,
}

impl FockOperator {
    fn square(matrix: &CMatrix) -> Result<TruncationDim> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                left: matrix.nrows(),
                right: matrix.ncols(),
            });
        }
        TruncationDim::new(matrix.nrows())
    }

    pub fn general(matrix: CMatrix) -> Result<Self> {
        let dim = Self::square(&matrix)?;
        Ok(Self {
            matrix,
            dim,
            kind: OperatorKind::General,
        })
    }

    /// Verifies `‖A − A†‖_max < 1e-10` (relative to the largest entry).
    pub fn hermitian(matrix: CMatrix) -> Result<Self> {
        let dim = Self::square(&matrix)?;
        let defect = linalg::hermiticity_defect(&matrix);
        if defect > LABEL_TOL * linalg::max_abs(&matrix).max(1.0) {
            return Err(Error::NotHermitian(defect));
        }
        Ok(Self {
            matrix,
            dim,
            kind: OperatorKind::Hermitian,
        })
    }

    /// Verifies `‖U†U − I‖_max < 1e-10` over the whole truncated space.
    pub fn unitary(matrix: CMatrix) -> Result<Self> {
        let dim = Self::square(&matrix)?;
        let defect = linalg::unitarity_defect(&matrix);
        if defect > LABEL_TOL {
            return Err(Error::NotUnitary(defect));
        }
        Ok(Self {
            matrix,
            dim,
            kind: OperatorKind::Unitary,
        })
    }

    pub fn identity(d: TruncationDim) -> Self {
        Self {
            matrix: CMatrix::identity(d.get(), d.get()),
            dim: d,
            kind: OperatorKind::Unitary,
        }
    }

    pub fn zero(d: TruncationDim) -> Self {
        Self {
            matrix: CMatrix::zeros(d.get(), d.get()),
            dim: d,
            kind: OperatorKind::Hermitian,
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> TruncationDim {
        self.dim
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn is_hermitian(&self) -> bool {
        self.kind == OperatorKind::Hermitian
    }

    pub fn adjoint(&self) -> Self {
        Self {
            matrix: self.matrix.adjoint(),
            dim: self.dim,
            kind: self.kind,
        }
    }

    /// Operator product `self · rhs`; labelled unitary only if both are.
    pub fn compose(&self, rhs: &FockOperator) -> Result<Self> {
        self.dim.check_eq(rhs.dim)?;
        let kind = if self.kind == OperatorKind::Unitary && rhs.kind == OperatorKind::Unitary {
            OperatorKind::Unitary
        } else {
            OperatorKind::General
        };
        Ok(Self {
            matrix: &self.matrix * &rhs.matrix,
            dim: self.dim,
            kind,
        })
    }

    /// Unnormalized `A|ψ⟩`.
    pub fn apply(&self, psi: &PureState) -> Result<CVector> {
        self.dim.check_eq(psi.dim)?;
        Ok(&self.matrix * &psi.amps)
    }

    /// `‖U†U − I‖_max` restricted to levels below `dim − band`.
    pub fn unitarity_defect_below(&self, band: usize) -> f64 {
        let keep = self.dim.get().saturating_sub(band);
        let uu = self.matrix.adjoint() * &self.matrix;
        let mut worst: f64 = 0.0;
        for j in 0..keep {
            for i in 0..keep {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((uu[(i, j)] - Complex64::new(target, 0.0)).norm());
            }
        }
        worst
    }
}

pub fn make_number_basis_state(n: usize, d: TruncationDim) -> Result<PureState> {
    if n >= d.get() {
        return Err(Error::LevelOutOfRange { level: n, dim: d.get() });
    }
    let mut amps = CVector::zeros(d.get());
    amps[n] = Complex64::new(1.0, 0.0);
    Ok(PureState::from_normalized(amps, d))
}

pub fn vacuum(d: TruncationDim) -> PureState {
    make_number_basis_state(0, d).expect("level 0 always exists")
}

/// A truncated coherent state together with the weight lost to truncation.
#[derive(Debug, Clone)]
pub struct CoherentPreparation {
    pub state: PureState,
    /// `1 − Σ_{n<dim} |⟨n|α⟩|²` before renormalization.
    pub leakage: f64,
}

/// Coherent state `|α⟩` restricted to `dim` levels and renormalized.
pub fn make_coherent_state(alpha: CoherentAmplitude, d: TruncationDim) -> CoherentPreparation {
    let dim = d.get();
    let r = alpha.modulus();
    let mut amps = CVector::zeros(dim);
    if r == 0.0 {
        amps[0] = Complex64::new(1.0, 0.0);
        return CoherentPreparation {
            state: PureState::from_normalized(amps, d),
            leakage: 0.0,
        };
    }
    // log |c_n| = -r²/2 + n ln r - ln(n!)/2, accumulated to avoid overflow.
    let ln_r = r.ln();
    let mut ln_mag = -0.5 * r * r;
    let mut kept = 0.0;
    for n in 0..dim {
        if n > 0 {
            ln_mag += ln_r - 0.5 * (n as f64).ln();
        }
        let mag = ln_mag.exp();
        kept += mag * mag;
        amps[n] = Complex64::from_polar(mag, n as f64 * alpha.phase());
    }
    let leakage = (1.0 - kept).max(0.0);
    let state = PureState::from_amplitudes(amps).expect("coherent amplitudes are nonzero");
    CoherentPreparation { state, leakage }
}

pub fn annihilation_op(d: TruncationDim) -> FockOperator {
    let n = d.get();
    let mut m = CMatrix::zeros(n, n);
    for k in 1..n {
        m[(k - 1, k)] = Complex64::new((k as f64).sqrt(), 0.0);
    }
    FockOperator {
        matrix: m,
        dim: d,
        kind: OperatorKind::General,
    }
}

pub fn creation_op(d: TruncationDim) -> FockOperator {
    annihilation_op(d).adjoint()
}

pub fn number_op(d: TruncationDim) -> FockOperator {
    let n = d.get();
    FockOperator {
        matrix: CMatrix::from_diagonal(&CVector::from_iterator(
            n,
            (0..n).map(|k| Complex64::new(k as f64, 0.0)),
        )),
        dim: d,
        kind: OperatorKind::Hermitian,
    }
}

/// `D(β) = exp(β c† − β* c)` on the truncated space.
pub fn displacement_op(beta: CoherentAmplitude, d: TruncationDim) -> FockOperator {
    if beta.modulus() == 0.0 {
        return FockOperator::identity(d);
    }
    let b = beta.to_complex();
    let c = annihilation_op(d);
    let generator = c.matrix.adjoint() * b - c.matrix * b.conj();
    // The exponential of an anti-Hermitian matrix is unitary on the truncated space.
    FockOperator {
        matrix: linalg::expm(&generator),
        dim: d,
        kind: OperatorKind::Unitary,
    }
}

/// Rows of the truncated displacement that are not faithful to the
/// infinite-dimensional operator.
pub fn displacement_truncation_band(beta: CoherentAmplitude) -> usize {
    4usize.max((4.0 * beta.modulus()).ceil() as usize)
}

/// `⟨ψ|A|ψ⟩`.
pub fn expectation(op: &FockOperator, psi: &PureState) -> Result<Complex64> {
    let v = op.apply(psi)?;
    Ok(psi.amps.dotc(&v))
}

/// Real expectation of a Hermitian-labelled operator.
pub fn expectation_real(op: &FockOperator, psi: &PureState) -> Result<f64> {
    if !op.is_hermitian() {
        return Err(Error::NotHermitian(f64::NAN));
    }
    Ok(expectation(op, psi)?.re)
}

/// `⟨c⟩`, the per-trajectory estimate of the cavity field amplitude.
pub fn field_amplitude(psi: &PureState) -> Complex64 {
    let a = &psi.amps;
    (1..a.len())
        .map(|n| a[n - 1].conj() * a[n] * (n as f64).sqrt())
        .sum()
}
