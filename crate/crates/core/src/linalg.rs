//! Dense complex linear algebra helpers.
//!
//! The matrix exponential is the scaling-and-squaring algorithm with
//! diagonal Padé approximants of degree 3, 5, 7, 9 or 13, selected from the
//! 1-norm (Higham, SIAM J. Matrix Anal. Appl. 26(4), 2005).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

const THETA: [(usize, f64); 4] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068),
];
const THETA_13: f64 = 5.371_920_351_148_152;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];
const B9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Induced 1-norm (maximum absolute column sum).
pub fn norm1(a: &CMatrix) -> f64 {
    a.column_iter()
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest entrywise modulus.
pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest entrywise modulus of `a - b`.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn hermiticity_defect(a: &CMatrix) -> f64 {
    max_abs_diff(a, &a.adjoint())
}

pub fn unitarity_defect(a: &CMatrix) -> f64 {
    let n = a.nrows();
    max_abs_diff(&(a.adjoint() * a), &CMatrix::identity(n, n))
}

/// Diagonal of `a` if every off-diagonal entry is exactly zero.
pub fn exact_diagonal(a: &CMatrix) -> Option<Vec<Complex64>> {
    let n = a.nrows();
    for j in 0..n {
        for i in 0..n {
            if i != j && a[(i, j)] != Complex64::new(0.0, 0.0) {
                return None;
            }
        }
    }
    Some((0..n).map(|i| a[(i, i)]).collect())
}

/// Matrix exponential of a square complex matrix.
///
/// Panics if `a` is not square.
pub fn expm(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm requires a square matrix");
    if n == 0 {
        return a.clone();
    }
    if let Some(diag) = exact_diagonal(a) {
        return CMatrix::from_diagonal(&CVector::from_iterator(n, diag.into_iter().map(|z| z.exp())));
    }

    let nrm = norm1(a);
    let ident = CMatrix::identity(n, n);
    for (m, theta) in THETA {
        if nrm <= theta {
            let coeffs: &[f64] = match m {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            let (u, v) = pade_low(a, coeffs, &ident);
            return solve_pade(&u, &v);
        }
    }

    let s = if nrm > THETA_13 {
        (nrm / THETA_13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a * re(0.5f64.powi(s));
    let (u, v) = pade13(&scaled, &ident);
    let mut r = solve_pade(&u, &v);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

fn pade_low(a: &CMatrix, b: &[f64], ident: &CMatrix) -> (CMatrix, CMatrix) {
    let a2 = a * a;
    let mut u_inner = ident * re(b[1]);
    let mut v = ident * re(b[0]);
    let mut power = ident.clone();
    let mut k = 2;
    while k < b.len() {
        power = &power * &a2;
        v += &power * re(b[k]);
        u_inner += &power * re(b[k + 1]);
        k += 2;
    }
    (a * u_inner, v)
}

fn pade13(a: &CMatrix, ident: &CMatrix) -> (CMatrix, CMatrix) {
    let b = &B13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_hi = &a6 * re(b[13]) + &a4 * re(b[11]) + &a2 * re(b[9]);
    let u_inner = &a6 * u_hi + &a6 * re(b[7]) + &a4 * re(b[5]) + &a2 * re(b[3]) + ident * re(b[1]);
    let u = a * u_inner;
    let v_hi = &a6 * re(b[12]) + &a4 * re(b[10]) + &a2 * re(b[8]);
    let v = &a6 * v_hi + &a6 * re(b[6]) + &a4 * re(b[4]) + &a2 * re(b[2]) + ident * re(b[0]);
    (u, v)
}

fn solve_pade(u: &CMatrix, v: &CMatrix) -> CMatrix {
    let p = v + u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .expect("Pade denominator is nonsingular for the selected degree")
}

/// Exponential of an anti-Hermitian matrix through the eigendecomposition of
/// the Hermitian matrix `-i a`. Exactly unitary up to rounding; used as an
/// independent route to `expm` for displacement generators.
pub fn expm_anti_hermitian(a: &CMatrix) -> CMatrix {
    let h = a * (-I);
    let h = (&h + h.adjoint()) * re(0.5);
    let eig = nalgebra::SymmetricEigen::new(h);
    let phases = CVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&lam| (I * lam).exp()),
    );
    &eig.eigenvectors * CMatrix::from_diagonal(&phases) * eig.eigenvectors.adjoint()
}

/// Eigenvalues of a Hermitian matrix (symmetrised before decomposition).
pub fn hermitian_eigenvalues(a: &CMatrix) -> Vec<f64> {
    let h = (a + a.adjoint()) * re(0.5);
    nalgebra::SymmetricEigen::new(h).eigenvalues.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> CMatrix {
        CMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale
        })
    }

    // Truncated Taylor series with repeated halving; slow but independent.
    fn taylor_expm(a: &CMatrix) -> CMatrix {
        let n = a.nrows();
        let s = (norm1(a).max(1.0)).log2().ceil() as i32 + 4;
        let b = a * re(0.5f64.powi(s));
        let mut term = CMatrix::identity(n, n);
        let mut sum = term.clone();
        for k in 1..40 {
            term = &term * &b * re(1.0 / k as f64);
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let z = CMatrix::zeros(5, 5);
        assert!(max_abs_diff(&expm(&z), &CMatrix::identity(5, 5)) == 0.0);
    }

    #[test]
    fn diagonal_shortcut_matches_scalar_exp() {
        let d = CMatrix::from_diagonal(&CVector::from_vec(vec![
            Complex64::new(-0.5, 0.0),
            Complex64::new(0.0, 2.0),
            Complex64::new(1.0, -1.0),
        ]));
        let e = expm(&d);
        assert!((e[(2, 2)] - Complex64::new(1.0, -1.0).exp()).norm() < 1e-15);
        assert_eq!(e[(0, 1)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn matches_taylor_across_pade_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &scale in &[1e-3, 0.05, 0.2, 0.5, 1.0, 3.0, 10.0] {
            let a = random_matrix(6, scale, &mut rng);
            let err = max_abs_diff(&expm(&a), &taylor_expm(&a));
            let mag = max_abs(&taylor_expm(&a)).max(1.0);
            assert!(err / mag < 1e-11, "scale {scale}: rel err {}", err / mag);
        }
    }

    #[test]
    fn anti_hermitian_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_matrix(12, 2.0, &mut rng);
        let a = (&g - g.adjoint()) * re(0.5);
        let e1 = expm(&a);
        let e2 = expm_anti_hermitian(&a);
        assert!(max_abs_diff(&e1, &e2) < 1e-11);
        assert!(unitarity_defect(&e1) < 1e-11);
    }

    #[test]
    fn hermitian_eigenvalues_of_diagonal() {
        let d = CMatrix::from_diagonal(&CVector::from_vec(vec![re(3.0), re(-1.0), re(2.0)]));
        let mut ev = hermitian_eigenvalues(&d);
        ev.sort_by(f64::total_cmp);
        assert_eq!(ev, vec![-1.0, 2.0, 3.0]);
    }
}
