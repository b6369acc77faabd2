//! Dense complex linear algebra for the 3- and 9-dimensional spin spaces.
//!
//! The product basis is ordered `(mS, mI)` with the electron projection as the
//! slow index and both projections running `+1, 0, -1`:
//!
//! ```text
//! index = 3 * (1 - mS) + (1 - mI)
//! ```
//!
//! The eigensolver is a cyclic complex Jacobi iteration. On the strongly
//! diagonally dominant Hamiltonians of this crate it keeps every eigenvalue in
//! the slot of the basis state it grew out of, and it delivers eigenvalues with
//! high relative accuracy.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Relative tolerance used when checking that a matrix is Hermitian.
pub const HERMITIAN_RTOL: f64 = 1e-9;
/// Sweep cap for the Jacobi eigensolver.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Off-diagonal Frobenius norm (Hz) at which the Jacobi iteration stops.
pub const JACOBI_OFF_TOL: f64 = 1e-10;
/// Smallest admissible squared overlap between an eigenvector and its label.
pub const LABEL_MIN_OVERLAP: f64 = 0.5;
/// Candidate threshold for the exhaustive relabelling fallback.
const LABEL_CANDIDATE_OVERLAP: f64 = 0.1;

/// Magnetic quantum number of a spin-1 particle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Projection {
    #[serde(rename = "+1")]
    Plus,
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "-1")]
    Minus,
}

impl Projection {
    /// Basis order used everywhere in the crate.
    pub const ALL: [Projection; 3] = [Projection::Plus, Projection::Zero, Projection::Minus];

    pub fn value(self) -> i32 {
        match self {
            Projection::Plus => 1,
            Projection::Zero => 0,
            Projection::Minus => -1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }

    pub fn from_value(v: i32) -> Option<Self> {
        match v {
            1 => Some(Projection::Plus),
            0 => Some(Projection::Zero),
            -1 => Some(Projection::Minus),
            _ => None,
        }
    }

    /// Position of this projection inside a 3-dimensional spin-1 space.
    pub fn offset(self) -> usize {
        (1 - self.value()) as usize
    }
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Projection::Plus => write!(f, "+1"),
            Projection::Zero => write!(f, "0"),
            Projection::Minus => write!(f, "-1"),
        }
    }
}

/// Product basis state `|mS, mI>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BasisState {
    pub ms: Projection,
    pub mi: Projection,
}

impl BasisState {
    pub const fn new(ms: Projection, mi: Projection) -> Self {
        Self { ms, mi }
    }

    pub fn index(self) -> usize {
        3 * self.ms.offset() + self.mi.offset()
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < 9, "basis index {i} out of range");
        Self {
            ms: Projection::ALL[i / 3],
            mi: Projection::ALL[i % 3],
        }
    }

    /// All nine states in basis order.
    pub fn all() -> [BasisState; 9] {
        std::array::from_fn(BasisState::from_index)
    }
}

impl fmt::Display for BasisState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|mS={},mI={}>", self.ms, self.mi)
    }
}

/// Square complex matrix without any structural guarantee.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    dim: usize,
    data: Vec<C64>,
}

impl Operator {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![C64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(dim: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[C64] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = self[(j, i)].conj();
            }
        }
        out
    }

    pub fn scale(&self, k: C64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&z| z * k).collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &(self * other) - &(other * self)
    }

    pub fn anticommutator(&self, other: &Self) -> Self {
        &(self * other) + &(other * self)
    }
}

impl std::ops::Index<(usize, usize)> for Operator {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Operator {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim);
        Operator {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim);
        Operator {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim);
        let n = self.dim;
        let mut out = Operator::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

/// Complex Hermitian matrix of dimension 3 or 9, entries in Hz for Hamiltonians.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(Operator);

impl HermitianMatrix {
    pub fn new(dim: usize, entries: Vec<C64>) -> Result<Self> {
        Self::try_from(Operator::from_rows(dim, entries)?)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(Operator::zeros(dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(Operator::identity(dim))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let mut m = Operator::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.0[(i, i)].re).collect()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn as_operator(&self) -> &Operator {
        &self.0
    }

    pub fn into_operator(self) -> Operator {
        self.0
    }

    /// Multiplication by a real number keeps the matrix Hermitian.
    pub fn scaled(&self, k: f64) -> Self {
        Self(self.0.scale(C64::new(k, 0.0)))
    }

    /// `self + k * other`.
    pub fn add_scaled(&self, k: f64, other: &Self) -> Self {
        Self(&self.0 + &other.0.scale(C64::new(k, 0.0)))
    }

    /// Symmetrised product `AB + BA`, Hermitian for Hermitian factors.
    pub fn anticommutator(&self, other: &Self) -> Self {
        Self(self.0.anticommutator(&other.0))
    }

    pub fn square(&self) -> Self {
        Self(&self.0 * &self.0)
    }

    /// Real part of the matrix when every imaginary component vanishes exactly.
    pub fn is_real(&self) -> bool {
        self.0.data.iter().all(|z| z.im == 0.0)
    }
}

impl TryFrom<Operator> for HermitianMatrix {
    type Error = Error;

    fn try_from(op: Operator) -> Result<Self> {
        let n = op.dim;
        let scale = op.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in i..n {
                let d = (op[(i, j)] - op[(j, i)].conj()).norm();
                if d > HERMITIAN_RTOL * scale {
                    return Err(Error::NotHermitian {
                        row: i,
                        col: j,
                        defect: d,
                    });
                }
            }
        }
        Ok(Self(op))
    }
}

impl Add for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn add(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn sub(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(&self.0 - &rhs.0)
    }
}

/// Spin-1 operators `(Sx, Sy, Sz)` in the `+1, 0, -1` basis.
pub fn spin1_operators() -> (HermitianMatrix, HermitianMatrix, HermitianMatrix) {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let z = C64::new(0.0, 0.0);
    let x = C64::new(r, 0.0);
    let iy = C64::new(0.0, r);
    let sx = vec![z, x, z, x, z, x, z, x, z];
    let sy = vec![z, -iy, z, iy, z, -iy, z, iy, z];
    let sz = vec![C64::new(1.0, 0.0), z, z, z, z, z, z, z, C64::new(-1.0, 0.0)];
    (
        HermitianMatrix(Operator { dim: 3, data: sx }),
        HermitianMatrix(Operator { dim: 3, data: sy }),
        HermitianMatrix(Operator { dim: 3, data: sz }),
    )
}

/// Tensor product of two 3x3 operators, electron factor first.
pub fn kron(a: &HermitianMatrix, b: &HermitianMatrix) -> Result<HermitianMatrix> {
    for m in [a, b] {
        if m.dim() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                found: m.dim(),
            });
        }
    }
    let mut out = Operator::zeros(9);
    for i in 0..3 {
        for j in 0..3 {
            let aij = a.get(i, j);
            for k in 0..3 {
                for l in 0..3 {
                    out[(3 * i + k, 3 * j + l)] = aij * b.get(k, l);
                }
            }
        }
    }
    Ok(HermitianMatrix(out))
}

/// Eigen-decomposition of a Hermitian matrix.
///
/// `values[k]` belongs to column `k` of `vectors`. Values are not sorted; they
/// stay in the slot where the Jacobi iteration leaves them, which for nearly
/// diagonal input is the slot of the dominant basis state. `labels` is filled
/// by [`label_states`].
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    pub vectors: Operator,
    pub labels: Option<Vec<BasisState>>,
    pub sweeps: usize,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Squared overlap `|<basis|v_k>|^2`.
    pub fn overlap(&self, basis: usize, k: usize) -> f64 {
        self.vectors[(basis, k)].norm_sqr()
    }

    /// Energy of the eigenstate labelled with `state`.
    pub fn energy(&self, state: BasisState) -> Option<f64> {
        let labels = self.labels.as_ref()?;
        labels
            .iter()
            .position(|&l| l == state)
            .map(|k| self.values[k])
    }

    /// `V diag(values) V^H`.
    pub fn reconstruct(&self) -> Operator {
        let n = self.dim();
        let mut out = Operator::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..n {
                    acc += self.vectors[(i, k)] * self.values[k] * self.vectors[(j, k)].conj();
                }
                out[(i, j)] = acc;
            }
        }
        out
    }
}

fn off_diagonal_norm(a: &Operator) -> f64 {
    let n = a.dim;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigensolver for complex Hermitian matrices.
pub fn eigh(h: &HermitianMatrix) -> Result<EigenSystem> {
    // Re-validate: a HermitianMatrix built through arithmetic can drift.
    let h = HermitianMatrix::try_from(h.0.clone())?;
    let n = h.dim();
    let mut a = h.0;
    let mut v = Operator::identity(n);

    // Work on an exactly Hermitian copy with a real diagonal.
    for i in 0..n {
        a[(i, i)] = C64::new(a[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)].conj());
            a[(i, j)] = m;
            a[(j, i)] = m.conj();
        }
    }

    let mut sweeps = 0;
    loop {
        if off_diagonal_norm(&a) <= JACOBI_OFF_TOL {
            break;
        }
        if sweeps >= JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence {
                what: "Jacobi eigensolver",
                iterations: sweeps,
            });
        }
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r == 0.0 {
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                // Entries that can no longer move either diagonal element are dropped.
                if sweeps > 4
                    && app.abs() + 100.0 * r == app.abs()
                    && aqq.abs() + 100.0 * r == aqq.abs()
                {
                    a[(p, q)] = C64::new(0.0, 0.0);
                    a[(q, p)] = C64::new(0.0, 0.0);
                    continue;
                }
                rotated = true;
                let phase = apq / r;
                let theta = (aqq - app) / (2.0 * r);
                let t = if theta.is_infinite() {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // J = diag(1, conj(phase)) * [[c, s], [-s, c]] on the (p, q) plane.
                let jpp = C64::new(c, 0.0);
                let jpq = C64::new(s, 0.0);
                let jqp = -s * phase.conj();
                let jqq = c * phase.conj();

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * jpp + akq * jqp;
                    a[(k, q)] = akp * jpq + akq * jqq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = jpp.conj() * apk + jqp.conj() * aqk;
                    a[(q, k)] = jpq.conj() * apk + jqq.conj() * aqk;
                }
                a[(p, p)] = C64::new(app - t * r, 0.0);
                a[(q, q)] = C64::new(aqq + t * r, 0.0);
                a[(p, q)] = C64::new(0.0, 0.0);
                a[(q, p)] = C64::new(0.0, 0.0);

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * jpp + vkq * jqp;
                    v[(k, q)] = vkp * jpq + vkq * jqq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    Ok(EigenSystem {
        values: (0..n).map(|i| a[(i, i)].re).collect(),
        vectors: v,
        labels: None,
        sweeps,
    })
}

/// Assign every eigenvector the product basis state it overlaps most with.
///
/// The per-vector argmax is used when it is already a bijection; otherwise the
/// bijection maximising the summed overlap is searched exhaustively among
/// candidates with overlap above 0.1. Fails when any eigenvector's largest
/// overlap is below one half, which happens at level anticrossings where the
/// product-state names stop meaning anything.
pub fn label_states(mut es: EigenSystem) -> Result<EigenSystem> {
    let n = es.dim();
    for k in 0..n {
        let best = (0..n).map(|b| es.overlap(b, k)).fold(0.0, f64::max);
        if best < LABEL_MIN_OVERLAP {
            return Err(Error::Labeling {
                eigenvector: k,
                max_overlap: best,
            });
        }
    }

    let argmax: Vec<usize> = (0..n)
        .map(|k| {
            (0..n)
                .max_by(|&x, &y| es.overlap(x, k).total_cmp(&es.overlap(y, k)))
                .unwrap()
        })
        .collect();
    let mut seen = vec![false; n];
    let bijective = argmax
        .iter()
        .all(|&b| !std::mem::replace(&mut seen[b], true));

    let assignment = if bijective {
        argmax
    } else {
        best_bijection(&es).ok_or(Error::Labeling {
            eigenvector: 0,
            max_overlap: 0.0,
        })?
    };

    let labels = if n == 9 {
        assignment
            .iter()
            .map(|&b| BasisState::from_index(b))
            .collect()
    } else {
        // 3-dimensional spaces carry the nuclear projection only.
        assignment
            .iter()
            .map(|&b| BasisState::new(Projection::Zero, Projection::ALL[b]))
            .collect()
    };
    es.labels = Some(labels);
    Ok(es)
}

fn best_bijection(es: &EigenSystem) -> Option<Vec<usize>> {
    let n = es.dim();
    let candidates: Vec<Vec<usize>> = (0..n)
        .map(|k| {
            (0..n)
                .filter(|&b| es.overlap(b, k) > LABEL_CANDIDATE_OVERLAP)
                .collect()
        })
        .collect();

    struct Search<'a> {
        es: &'a EigenSystem,
        candidates: &'a [Vec<usize>],
        used: Vec<bool>,
        current: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }

    impl Search<'_> {
        fn run(&mut self, k: usize, score: f64) {
            if k == self.candidates.len() {
                if self.best.as_ref().is_none_or(|(s, _)| score > *s) {
                    self.best = Some((score, self.current.clone()));
                }
                return;
            }
            for &b in &self.candidates[k] {
                if !self.used[b] {
                    self.used[b] = true;
                    self.current.push(b);
                    self.run(k + 1, score + self.es.overlap(b, k));
                    self.current.pop();
                    self.used[b] = false;
                }
            }
        }
    }

    let mut search = Search {
        es,
        candidates: &candidates,
        used: vec![false; n],
        current: Vec::with_capacity(n),
        best: None,
    };
    search.run(0, 0.0);
    search.best.map(|(_, a)| a)
}
