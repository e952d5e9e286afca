//! Sequential two-outcome measurements on a qubit versus one joint
//! measurement on an N-party state.
//!
//! Repeating a measurement with Kraus operators `K0, K1` on `|ψ⟩` yields
//! bit strings `b` with probability `‖K_{b_N}⋯K_{b_1}ψ‖²`. Placing amplitude
//! `√p(b)` on the product basis `|ξ_{b_1}⋯ξ_{b_N}⟩` gives a state whose
//! Born-rule statistics in that basis are the same distribution.

use nalgebra::{DMatrix, Matrix2, Vector2};
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub type C2 = Vector2<Complex64>;
pub type M2 = Matrix2<Complex64>;

pub const MAX_SEQUENTIAL_N: usize = 20;
pub const MAX_EFFECTIVE_N: usize = 12;
const COMPLETENESS_TOL: f64 = 1e-12;
const DISTRIBUTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct QubitState(C2);

impl QubitState {
    /// Normalizes `v`.
    pub fn new(v: C2) -> Result<Self> {
        let n = v.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::VanishingNorm(n));
        }
        Ok(Self(v / Complex64::new(n, 0.0)))
    }

    pub fn amplitudes(&self) -> &C2 {
        &self.0
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let v = C2::new(gaussian_c(rng), gaussian_c(rng));
            if let Ok(s) = Self::new(v) {
                return s;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrausPair {
    k0: M2,
    k1: M2,
    /// Measurement basis `{ξ0, ξ1}` of the effective state.
    basis: [C2; 2],
}

fn completeness_defect(k0: &M2, k1: &M2) -> f64 {
    let s = k0.adjoint() * k0 + k1.adjoint() * k1 - M2::identity();
    s.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

impl KrausPair {
    /// General pair with the computational basis as the effective-state basis.
    pub fn new(k0: M2, k1: M2) -> Result<Self> {
        let d = completeness_defect(&k0, &k1);
        if d > COMPLETENESS_TOL {
            return Err(Error::Completeness(d));
        }
        Ok(Self {
            k0,
            k1,
            basis: [C2::new(one(), zero()), C2::new(zero(), one())],
        })
    }

    /// `K_i = |ξ̃_i⟩⟨ξ_i|` for an orthonormal `{ξ0, ξ1}`. Completeness then
    /// requires unit-norm `ξ̃_i`.
    pub fn rank_one(xi: [C2; 2], xi_tilde: [C2; 2]) -> Result<Self> {
        for v in &xi {
            if (v.norm() - 1.0).abs() > COMPLETENESS_TOL {
                return Err(Error::param("xi", "basis vectors must be normalized"));
            }
        }
        let overlap = xi[0].dotc(&xi[1]).norm();
        if overlap > COMPLETENESS_TOL {
            return Err(Error::param("xi", format!("basis vectors overlap by {overlap:e}")));
        }
        let k0 = xi_tilde[0] * xi[0].adjoint();
        let k1 = xi_tilde[1] * xi[1].adjoint();
        let d = completeness_defect(&k0, &k1);
        if d > COMPLETENESS_TOL {
            return Err(Error::Completeness(d));
        }
        Ok(Self { k0, k1, basis: xi })
    }

    /// `K0 = |ξ1⟩⟨ξ0|`, `K1 = |ξ0⟩⟨ξ1|`.
    pub fn swap(xi: [C2; 2]) -> Result<Self> {
        Self::rank_one(xi, [xi[1], xi[0]])
    }

    /// `K_i = |ξ_i⟩⟨ξ_i|`.
    pub fn projective(xi: [C2; 2]) -> Result<Self> {
        Self::rank_one(xi, xi)
    }

    pub fn k(&self, outcome: usize) -> &M2 {
        if outcome == 0 {
            &self.k0
        } else {
            &self.k1
        }
    }

    pub fn basis(&self) -> &[C2; 2] {
        &self.basis
    }

    /// Random rank-one pair: Haar-like bases from normalized Gaussian vectors.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let xi = random_basis(rng);
        let tilde = [QubitState::random(rng).0, QubitState::random(rng).0];
        Self::rank_one(xi, tilde).expect("random rank-one pair is complete")
    }

    /// Random pair from a 4×2 isometry `[K0; K1]`, so both operators are
    /// generically full rank.
    pub fn random_isometry<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let g = DMatrix::from_fn(4, 2, |_, _| gaussian_c(rng));
        let q = g.qr().q();
        let k0 = M2::new(q[(0, 0)], q[(0, 1)], q[(1, 0)], q[(1, 1)]);
        let k1 = M2::new(q[(2, 0)], q[(2, 1)], q[(3, 0)], q[(3, 1)]);
        Self::new(k0, k1).expect("isometry columns are orthonormal")
    }
}

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

fn one() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

fn gaussian_c<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    // Box-Muller; the imaginary part uses the second variate.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    let r = (-2.0 * u1.ln()).sqrt();
    Complex64::from_polar(r, 2.0 * std::f64::consts::PI * u2)
}

pub fn random_basis<R: Rng + ?Sized>(rng: &mut R) -> [C2; 2] {
    let a = QubitState::random(rng).0;
    // Orthogonal complement of (a0, a1) is (−a1*, a0*).
    let b = C2::new(-a[1].conj(), a[0].conj());
    [a, b]
}

/// Probabilities indexed by bit string; bit `k` of the index (counting
/// from the most significant of `n`) is outcome `k+1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeDistribution {
    pub n: usize,
    pub probs: Vec<f64>,
}

impl OutcomeDistribution {
    pub fn label(&self, index: usize) -> String {
        (0..self.n)
            .map(|k| if index >> (self.n - 1 - k) & 1 == 1 { '1' } else { '0' })
            .collect()
    }

    pub fn prob(&self, bits: &str) -> Option<f64> {
        if bits.len() != self.n {
            return None;
        }
        usize::from_str_radix(bits, 2).ok().map(|i| self.probs[i])
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &OutcomeDistribution) -> f64 {
        assert_eq!(self.n, other.n, "distributions over different lengths");
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_n(n: usize, cap: usize) -> Result<()> {
    if n == 0 || n > cap {
        return Err(Error::param("n", format!("must lie in 1..={cap}, got {n}")));
    }
    Ok(())
}

/// Exact outcome distribution of `n` sequential measurements.
pub fn sequential_distribution(psi: &QubitState, kp: &KrausPair, n: usize) -> Result<OutcomeDistribution> {
    check_n(n, MAX_SEQUENTIAL_N)?;
    let d = completeness_defect(&kp.k0, &kp.k1);
    if d > DISTRIBUTION_TOL {
        return Err(Error::Completeness(d));
    }
    // Unnormalized branch states, level by level; index grows by appending a bit.
    let mut branches = vec![psi.0];
    for _ in 0..n {
        let mut next = Vec::with_capacity(branches.len() * 2);
        for v in &branches {
            next.push(kp.k0 * v);
            next.push(kp.k1 * v);
        }
        branches = next;
    }
    let probs = branches.iter().map(|v| v.norm_squared()).collect();
    Ok(OutcomeDistribution { n, probs })
}

/// Effective N-party state with non-negative amplitudes `√p(b)` on the
/// product basis of the pair's `{ξ0, ξ1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveEntangledState {
    pub n: usize,
    /// Coefficients in the product basis, same indexing as [`OutcomeDistribution`].
    pub coeffs: Vec<f64>,
    pub basis: [C2; 2],
}

impl EffectiveEntangledState {
    /// Amplitudes in the computational basis of `(C²)^{⊗n}`.
    pub fn computational_amplitudes(&self) -> Vec<Complex64> {
        let dim = 1usize << self.n;
        let mut out = vec![zero(); dim];
        for (b, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (s, o) in out.iter_mut().enumerate() {
                let mut amp = Complex64::new(c, 0.0);
                for k in 0..self.n {
                    let shift = self.n - 1 - k;
                    amp *= self.basis[(b >> shift) & 1][(s >> shift) & 1];
                }
                *o += amp;
            }
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

pub fn build_effective_state(psi: &QubitState, kp: &KrausPair, n: usize) -> Result<EffectiveEntangledState> {
    check_n(n, MAX_EFFECTIVE_N)?;
    let dist = sequential_distribution(psi, kp, n)?;
    Ok(EffectiveEntangledState {
        n,
        coeffs: dist.probs.iter().map(|p| p.sqrt()).collect(),
        basis: kp.basis,
    })
}

/// Born-rule distribution of `state` measured party-by-party in `basis`,
/// evaluated by projecting the computational-basis amplitudes onto
/// Kronecker products of the basis vectors.
pub fn born_distribution(state: &EffectiveEntangledState, basis: &[C2; 2]) -> OutcomeDistribution {
    let n = state.n;
    let amps = state.computational_amplitudes();
    let dim = 1usize << n;
    let probs = (0..dim)
        .map(|b| {
            let mut proj = DMatrix::from_element(1, 1, one());
            for k in 0..n {
                let bit = (b >> (n - 1 - k)) & 1;
                let v = basis[bit];
                let col = DMatrix::from_column_slice(2, 1, &[v[0], v[1]]);
                proj = proj.kronecker(&col);
            }
            let overlap: Complex64 = proj.iter().zip(&amps).map(|(p, a)| p.conj() * a).sum();
            overlap.norm_sqr()
        })
        .collect();
    OutcomeDistribution { n, probs }
}

/// Von Neumann entropy (bits) of the first `cut` parties.
pub fn entanglement_measure(state: &EffectiveEntangledState, cut: usize) -> Result<f64> {
    if cut == 0 || cut >= state.n {
        return Err(Error::param("cut", format!("must lie in 1..{}", state.n)));
    }
    let amps = state.computational_amplitudes();
    let rows = 1usize << cut;
    let cols = 1usize << (state.n - cut);
    let m = DMatrix::from_fn(rows, cols, |i, j| amps[i * cols + j]);
    let sv = m.singular_values();
    let norm2: f64 = sv.iter().map(|s| s * s).sum();
    let entropy = sv
        .iter()
        .map(|s| s * s / norm2)
        .filter(|&p| p > 1e-300)
        .map(|p| -p * p.log2())
        .sum::<f64>();
    Ok(entropy.max(0.0))
}

/// Summary of a batch of random equivalence checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceSummary {
    pub instances: usize,
    pub max_abs_diff: f64,
    pub max_total_defect: f64,
}

/// Compares sequential and effective-state statistics on random instances
/// with `n` cycling through `1..=max_n`, alternating rank-one and
/// isometry-derived pairs.
pub fn random_equivalence<R: Rng + ?Sized>(rng: &mut R, instances: usize, max_n: usize) -> Result<EquivalenceSummary> {
    check_n(max_n, MAX_EFFECTIVE_N)?;
    let mut max_abs_diff = 0.0f64;
    let mut max_total_defect = 0.0f64;
    for i in 0..instances {
        let n = 1 + i % max_n;
        let psi = QubitState::random(rng);
        let kp = if i % 2 == 0 {
            KrausPair::random(rng)
        } else {
            KrausPair::random_isometry(rng)
        };
        let seq = sequential_distribution(&psi, &kp, n)?;
        let eff = build_effective_state(&psi, &kp, n)?;
        let born = born_distribution(&eff, kp.basis());
        max_abs_diff = max_abs_diff.max(seq.max_abs_diff(&born));
        max_total_defect = max_total_defect.max((seq.total() - 1.0).abs()).max((born.total() - 1.0).abs());
    }
    Ok(EquivalenceSummary {
        instances,
        max_abs_diff,
        max_total_defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn computational() -> [C2; 2] {
        [C2::new(one(), zero()), C2::new(zero(), one())]
    }

    #[test]
    fn identity_pair_puts_all_mass_on_zeros() {
        let kp = KrausPair::new(M2::identity(), M2::zeros()).unwrap();
        let psi = QubitState::new(C2::new(Complex64::new(0.6, 0.1), Complex64::new(0.3, -0.7))).unwrap();
        let d = sequential_distribution(&psi, &kp, 3).unwrap();
        assert!((d.prob("000").unwrap() - 1.0).abs() < 1e-15);
        assert!((d.total() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn incomplete_pair_rejected() {
        assert!(matches!(KrausPair::new(M2::identity(), M2::identity()), Err(Error::Completeness(_))));
        assert!(sequential_distribution(
            &QubitState::new(C2::new(one(), zero())).unwrap(),
            &KrausPair::projective(computational()).unwrap(),
            0
        )
        .is_err());
    }

    #[test]
    fn swap_pair_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xi = random_basis(&mut rng);
        let psi = QubitState::random(&mut rng);
        let kp = KrausPair::swap(xi).unwrap();
        let d = sequential_distribution(&psi, &kp, 2).unwrap();
        let p01 = xi[0].dotc(psi.amplitudes()).norm_sqr();
        let p10 = xi[1].dotc(psi.amplitudes()).norm_sqr();
        assert!(d.prob("00").unwrap() < 1e-15);
        assert!(d.prob("11").unwrap() < 1e-15);
        assert!((d.prob("01").unwrap() - p01).abs() < 1e-14);
        assert!((d.prob("10").unwrap() - p10).abs() < 1e-14);

        let eff = build_effective_state(&psi, &kp, 2).unwrap();
        assert!((eff.coeffs[0b01] - p01.sqrt()).abs() < 1e-14);
        assert!((eff.coeffs[0b10] - p10.sqrt()).abs() < 1e-14);
        assert!(eff.coeffs[0b00] < 1e-7 && eff.coeffs[0b11] < 1e-7);
    }

    #[test]
    fn bell_like_swap_state_has_one_bit() {
        let psi = QubitState::new(C2::new(one(), one())).unwrap();
        let kp = KrausPair::swap(computational()).unwrap();
        let eff = build_effective_state(&psi, &kp, 2).unwrap();
        assert!((entanglement_measure(&eff, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projective_pair_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xi = random_basis(&mut rng);
        let kp = KrausPair::projective(xi).unwrap();

        let eigen = QubitState::new(xi[0]).unwrap();
        let eff = build_effective_state(&eigen, &kp, 2).unwrap();
        assert!(entanglement_measure(&eff, 1).unwrap() < 1e-10);
        assert!(entanglement_measure(&eff, 0).is_err());

        // Repeated projections copy the first outcome, so a superposition
        // yields a correlated state carrying the binary entropy of p0.
        let psi = QubitState::random(&mut rng);
        let p0 = xi[0].dotc(psi.amplitudes()).norm_sqr();
        let h = -p0 * p0.log2() - (1.0 - p0) * (1.0 - p0).log2();
        let eff = build_effective_state(&psi, &kp, 3).unwrap();
        for cut in 1..3 {
            assert!((entanglement_measure(&eff, cut).unwrap() - h).abs() < 1e-10);
        }
    }

    #[test]
    fn random_pairs_match_born_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_equivalence(&mut rng, 60, 6).unwrap();
        assert!(s.max_abs_diff < 1e-12, "{}", s.max_abs_diff);
        assert!(s.max_total_defect < 1e-10);
    }

    #[test]
    fn brute_force_four_outcomes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let kp = KrausPair::random_isometry(&mut rng);
        let psi = QubitState::random(&mut rng);
        let d = sequential_distribution(&psi, &kp, 4).unwrap();
        for b in 0..16usize {
            let mut v = *psi.amplitudes();
            for k in (0..4).rev() {
                v = kp.k((b >> k) & 1) * v;
            }
            assert!((v.norm_squared() - d.probs[b]).abs() < 1e-15);
        }
        assert!((d.total() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn entropy_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let kp = KrausPair::random_isometry(&mut rng);
            let psi = QubitState::random(&mut rng);
            let eff = build_effective_state(&psi, &kp, 5).unwrap();
            assert!((eff.norm() - 1.0).abs() < 1e-10);
            for cut in 1..5 {
                let s = entanglement_measure(&eff, cut).unwrap();
                assert!(s >= 0.0 && s <= cut.min(5 - cut) as f64 + 1e-12);
            }
        }
    }

    #[test]
    fn labels_round_trip() {
        let d = OutcomeDistribution { n: 3, probs: vec![0.0; 8] };
        assert_eq!(d.label(0b011), "011");
        assert_eq!(d.label(0b100), "100");
    }
}
