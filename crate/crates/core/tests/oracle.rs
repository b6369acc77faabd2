//! Exact-arithmetic checks of the Jacobi eigensolver on the full Hamiltonian.
//!
//! The Hermitian matrix is embedded as the real symmetric `[[Re, -Im], [Im, Re]]`,
//! whose spectrum is that of the original with every value doubled. Its f64
//! entries are converted to exact rationals, and Sylvester's law of inertia
//! on an exact LDLᵀ of `M - σI` counts the eigenvalues below `σ`.

use num::{BigRational, Signed, Zero};
use nvspin::hamiltonian::{build_full, exact_levels};
use nvspin::spin::eigh;
use nvspin::{HermitianMatrix, NVParams, Strain};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Jacobi eigenvalues must sit within this distance of the exact spectrum (Hz).
const LEVEL_TOL_HZ: f64 = 1e-5;

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite entry")
}

fn embed(h: &HermitianMatrix) -> Vec<Vec<BigRational>> {
    let n = h.dim();
    let mut m = vec![vec![BigRational::zero(); 2 * n]; 2 * n];
    for i in 0..n {
        for j in 0..n {
            let z = h.get(i, j);
            m[i][j] = rational(z.re);
            m[i + n][j + n] = rational(z.re);
            m[i][j + n] = rational(-z.im);
            m[i + n][j] = rational(z.im);
        }
    }
    m
}

/// Eigenvalues of `m` strictly below `sigma`, or `None` when a pivot vanishes.
fn count_below(m: &[Vec<BigRational>], sigma: f64) -> Option<usize> {
    let n = m.len();
    let s = rational(sigma);
    // Only the lower triangle is read and updated.
    let mut a: Vec<Vec<BigRational>> = m.to_vec();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] -= &s;
    }
    let mut negative = 0;
    for k in 0..n {
        let pivot = a[k][k].clone();
        if pivot.is_zero() {
            return None;
        }
        if pivot.is_negative() {
            negative += 1;
        }
        for i in k + 1..n {
            if a[i][k].is_zero() {
                continue;
            }
            let f = &a[i][k] / &pivot;
            let (upper, lower) = a.split_at_mut(i);
            for (j, row) in upper.iter().enumerate().skip(k + 1) {
                lower[0][j] -= &f * &row[k];
            }
            let t = &f * &lower[0][k];
            lower[0][i] -= t;
        }
    }
    Some(negative)
}

fn sorted_levels(p: &NVParams) -> Vec<f64> {
    let es = eigh(&build_full(p).unwrap()).unwrap();
    let mut v = es.values.clone();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Every Jacobi eigenvalue `λ_k` must have exactly `k` exact eigenvalues
/// below `λ_k - tol` and `k + 1` below `λ_k + tol`.
fn assert_bracketed(p: &NVParams) {
    let h = build_full(p).unwrap();
    let m = embed(&h);
    let levels = sorted_levels(p);
    for (k, &l) in levels.iter().enumerate() {
        let below = count_below(&m, l - LEVEL_TOL_HZ).expect("regular shift");
        let above = count_below(&m, l + LEVEL_TOL_HZ).expect("regular shift");
        assert_eq!(
            below,
            2 * k,
            "level {k} at {l} Hz has too many exact values below it"
        );
        assert_eq!(
            above,
            2 * (k + 1),
            "level {k} at {l} Hz is not within {LEVEL_TOL_HZ} Hz"
        );
    }
}

#[test]
fn rational_inertia_counts_a_diagonal_matrix() {
    let h = HermitianMatrix::from_real_diagonal(&[3.0, -1.0, 2.0]);
    let m = embed(&h);
    assert_eq!(count_below(&m, -2.0), Some(0));
    assert_eq!(count_below(&m, 0.0), Some(2));
    assert_eq!(count_below(&m, 2.5), Some(4));
    assert_eq!(count_below(&m, 10.0), Some(6));
    assert_eq!(count_below(&m, 2.0), None);
}

#[test]
fn nominal_levels_match_the_exact_spectrum() {
    assert_bracketed(&NVParams::nominal());
}

#[test]
fn misaligned_and_strained_levels_match_the_exact_spectrum() {
    let strain = Strain {
        ez: 2e5,
        ex_prime: 1e6,
        ey_prime: -7e5,
        ex: 4e5,
        ey: 9e5,
    };
    assert_bracketed(&NVParams::from_field(0.045, 0.1f64.to_radians()).with_strain(strain));
    assert_bracketed(&NVParams::from_field(0.06, 0.05f64.to_radians()));
}

#[test]
fn random_parameters_match_the_exact_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..4 {
        let b = rng.gen_range(0.01..0.09);
        let tilt = rng.gen_range(0.0..2.0f64).to_radians();
        let s = 1e6;
        let strain = Strain {
            ez: rng.gen_range(-s..s),
            ex_prime: rng.gen_range(-s..s),
            ey_prime: rng.gen_range(-s..s),
            ex: rng.gen_range(-s..s),
            ey: rng.gen_range(-s..s),
        };
        assert_bracketed(&NVParams::from_field(b, tilt).with_strain(strain));
    }
}

#[test]
fn trace_is_preserved() {
    for p in [
        NVParams::nominal(),
        NVParams::from_field(0.03, 0.3f64.to_radians()),
    ] {
        let h = build_full(&p).unwrap();
        let sum: f64 = sorted_levels(&p).iter().sum();
        assert!(
            (sum - h.trace()).abs() < 1e-6 * h.trace().abs().max(1.0),
            "{sum} vs {}",
            h.trace()
        );
    }
}

#[test]
fn eigenvectors_reconstruct_the_matrix() {
    let p = NVParams::from_field(0.051, 0.1f64.to_radians()).with_strain(Strain {
        ex: 5e5,
        ey_prime: 5e5,
        ..Strain::default()
    });
    let h = build_full(&p).unwrap();
    let es = eigh(&h).unwrap();
    let back = es.reconstruct();
    let scale = h.as_operator().max_abs();
    for i in 0..9 {
        for j in 0..9 {
            let d = (back[(i, j)] - h.get(i, j)).norm();
            assert!(d < 1e-12 * scale, "({i},{j}) off by {d}");
        }
    }
    for a in 0..9 {
        for b in 0..9 {
            let dot: num_complex::Complex64 = (0..9)
                .map(|i| es.vectors[(i, a)].conj() * es.vectors[(i, b)])
                .sum();
            let want = if a == b { 1.0 } else { 0.0 };
            assert!((dot.re - want).abs() < 1e-12 && dot.im.abs() < 1e-12);
        }
    }
}

#[test]
fn exact_levels_are_the_sorted_spectrum_by_label() {
    let p = NVParams::nominal();
    let mut labelled = exact_levels(&p).unwrap().to_vec();
    labelled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let sorted = sorted_levels(&p);
    for (a, b) in labelled.iter().zip(&sorted) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}
