//! Complex 2×2 linear algebra for single-qubit states.
//!
//! Convention: `A_1 = σ_x`, `A_2 = σ_y`, `A_3 = σ_z` in the computational
//! basis. Hermitian eigenproblems are solved in closed form.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_complex::Complex;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{domain, invalid, Error, Result};
use crate::scalar::{Real, Tolerances};

/// A 2×2 complex matrix with finite entries.
#[derive(Clone, Copy, PartialEq)]
pub struct ComplexMatrix2<T> {
    m: [[Complex<T>; 2]; 2],
}

impl<T: Real> ComplexMatrix2<T> {
    /// Builds a matrix from row-major entries, rejecting NaN and infinities.
    pub fn new(m: [[Complex<T>; 2]; 2]) -> Result<Self> {
        if m.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return invalid("matrix has non-finite entries");
        }
        Ok(Self { m })
    }

    pub(crate) const fn from_entries(m: [[Complex<T>; 2]; 2]) -> Self {
        Self { m }
    }

    pub fn from_real(m: [[T; 2]; 2]) -> Self {
        let c = |x: T| Complex::new(x, T::zero());
        Self::from_entries([[c(m[0][0]), c(m[0][1])], [c(m[1][0]), c(m[1][1])]])
    }

    pub fn zero() -> Self {
        Self::from_real([[T::zero(); 2]; 2])
    }

    pub fn identity() -> Self {
        Self::from_real([[T::one(), T::zero()], [T::zero(), T::one()]])
    }

    /// `x0·I + x1·σ_x + x2·σ_y + x3·σ_z`. Hermitian for real coordinates.
    pub fn from_pauli_coords(x: [T; 4]) -> Self {
        let z = T::zero();
        Self::from_entries([
            [Complex::new(x[0] + x[3], z), Complex::new(x[1], -x[2])],
            [Complex::new(x[1], x[2]), Complex::new(x[0] - x[3], z)],
        ])
    }

    /// Coordinates `x_k = tr(M σ_k)/2` of the Hermitian part of the matrix.
    pub fn pauli_coords(&self) -> [T; 4] {
        let half = T::lit(0.5);
        let m = &self.m;
        [
            half * (m[0][0].re + m[1][1].re),
            half * (m[0][1].re + m[1][0].re),
            half * (m[1][0].im - m[0][1].im),
            half * (m[0][0].re - m[1][1].re),
        ]
    }

    #[inline]
    pub fn entry(&self, row: usize, col: usize) -> Complex<T> {
        self.m[row][col]
    }

    pub fn entries(&self) -> &[[Complex<T>; 2]; 2] {
        &self.m
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.m;
        Self::from_entries([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn trace(&self) -> Complex<T> {
        self.m[0][0] + self.m[1][1]
    }

    pub fn scale(&self, k: T) -> Self {
        let mut out = *self;
        out.m.iter_mut().flatten().for_each(|z| *z = *z * k);
        out
    }

    pub fn scale_complex(&self, k: Complex<T>) -> Self {
        let mut out = *self;
        out.m.iter_mut().flatten().for_each(|z| *z = *z * k);
        out
    }

    /// `U · M · U†`.
    pub fn conjugate_by(&self, u: &Self) -> Self {
        *u * *self * u.adjoint()
    }

    pub fn frobenius_norm(&self) -> T {
        self.m.iter().flatten().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt()
    }

    /// Largest absolute deviation from Hermiticity, `max |M − M†|`.
    pub fn hermiticity_residual(&self) -> T {
        let m = &self.m;
        let off = (m[0][1] - m[1][0].conj()).norm();
        off.max(m[0][0].im.abs()).max(m[1][1].im.abs())
    }

    pub fn is_hermitian(&self, tol: T) -> bool {
        self.hermiticity_residual() <= tol
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> [T; 2] {
        let [x0, x1, x2, x3] = self.pauli_coords();
        let r = (x1 * x1 + x2 * x2 + x3 * x3).sqrt();
        [x0 - r, x0 + r]
    }

    /// Eigen-decomposition of the Hermitian part: ascending eigenvalues and
    /// the matching orthonormal eigenvectors.
    pub fn hermitian_eigen(&self) -> ([T; 2], [[Complex<T>; 2]; 2]) {
        let [x0, x1, x2, x3] = self.pauli_coords();
        let r = (x1 * x1 + x2 * x2 + x3 * x3).sqrt();
        let vals = [x0 - r, x0 + r];
        let zero = Complex::new(T::zero(), T::zero());
        let one = Complex::new(T::one(), T::zero());
        if r <= T::epsilon() * (T::one() + x0.abs()) {
            return (vals, [[one, zero], [zero, one]]);
        }
        // Upper eigenvector of n·σ with n = x/r: the Bloch-sphere point n.
        let (nx, ny, nz) = (x1 / r, x2 / r, x3 / r);
        let up = bloch_ket(nx, ny, nz);
        let down = bloch_ket(-nx, -ny, -nz);
        (vals, [down, up])
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ComplexMatrix2<U> {
        let c = |z: Complex<T>| Complex::new(U::lit(z.re.to_f64_lossy()), U::lit(z.im.to_f64_lossy()));
        let m = &self.m;
        ComplexMatrix2::from_entries([[c(m[0][0]), c(m[0][1])], [c(m[1][0]), c(m[1][1])]])
    }
}

/// Unit ket whose Bloch vector is `(nx, ny, nz)`.
fn bloch_ket<T: Real>(nx: T, ny: T, nz: T) -> [Complex<T>; 2] {
    let one = T::one();
    let half = T::lit(0.5);
    if nz >= T::zero() {
        // (cos θ/2, e^{iφ} sin θ/2) with cos θ/2 ≥ 1/√2
        let c = ((one + nz) * half).sqrt();
        let k = T::lit(0.5) / c;
        [Complex::new(c, T::zero()), Complex::new(nx * k, ny * k)]
    } else {
        let s = ((one - nz) * half).sqrt();
        let k = T::lit(0.5) / s;
        [Complex::new(nx * k, -ny * k), Complex::new(s, T::zero())]
    }
}

/// `|ψ⟩⟨ψ|`.
pub fn outer<T: Real>(psi: &[Complex<T>; 2]) -> ComplexMatrix2<T> {
    ComplexMatrix2::from_entries([
        [psi[0] * psi[0].conj(), psi[0] * psi[1].conj()],
        [psi[1] * psi[0].conj(), psi[1] * psi[1].conj()],
    ])
}

impl<T: Real> Add for ComplexMatrix2<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut out = self;
        out += rhs;
        out
    }
}

impl<T: Real> AddAssign for ComplexMatrix2<T> {
    fn add_assign(&mut self, rhs: Self) {
        for r in 0..2 {
            for c in 0..2 {
                self.m[r][c] = self.m[r][c] + rhs.m[r][c];
            }
        }
    }
}

impl<T: Real> Sub for ComplexMatrix2<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl<T: Real> Neg for ComplexMatrix2<T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-T::one())
    }
}

impl<T: Real> Mul for ComplexMatrix2<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let a = &self.m;
        let b = &rhs.m;
        let e = |r: usize, c: usize| a[r][0] * b[0][c] + a[r][1] * b[1][c];
        Self::from_entries([[e(0, 0), e(0, 1)], [e(1, 0), e(1, 1)]])
    }
}

impl<T: fmt::Debug> fmt::Debug for ComplexMatrix2<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.m;
        write!(f, "[[{:?}, {:?}], [{:?}, {:?}]]", m[0][0], m[0][1], m[1][0], m[1][1])
    }
}

impl<T: Serialize + Copy> Serialize for ComplexMatrix2<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let p = |z: Complex<T>| [z.re, z.im];
        let m = &self.m;
        [[p(m[0][0]), p(m[0][1])], [p(m[1][0]), p(m[1][1])]].serialize(s)
    }
}

impl<'de, T: Real + Deserialize<'de>> Deserialize<'de> for ComplexMatrix2<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = <[[[T; 2]; 2]; 2]>::deserialize(d)?;
        let c = |p: [T; 2]| Complex::new(p[0], p[1]);
        Self::new([[c(raw[0][0]), c(raw[0][1])], [c(raw[1][0]), c(raw[1][1])]]).map_err(D::Error::custom)
    }
}

/// Pauli matrix `σ_i`, `i ∈ {1, 2, 3}`.
pub fn pauli<T: Real>(i: usize) -> Result<ComplexMatrix2<T>> {
    let (o, z) = (T::one(), T::zero());
    let c = Complex::new;
    match i {
        1 => Ok(ComplexMatrix2::from_real([[z, o], [o, z]])),
        2 => Ok(ComplexMatrix2::from_entries([[c(z, z), c(z, -o)], [c(z, o), c(z, z)]])),
        3 => Ok(ComplexMatrix2::from_real([[o, z], [z, -o]])),
        _ => domain(format!("Pauli index must be 1, 2 or 3, got {i}")),
    }
}

/// Eigenvalue `a ∈ {+1, −1}` of a Pauli observable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub const BOTH: [Outcome; 2] = [Outcome::Plus, Outcome::Minus];

    pub fn from_sign(a: i64) -> Result<Self> {
        match a {
            1 => Ok(Outcome::Plus),
            -1 => Ok(Outcome::Minus),
            _ => domain(format!("outcome must be +1 or -1, got {a}")),
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Outcome::Plus => 1,
            Outcome::Minus => -1,
        }
    }

    pub fn real<T: Real>(self) -> T {
        match self {
            Outcome::Plus => T::one(),
            Outcome::Minus => -T::one(),
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Outcome::Plus => Outcome::Minus,
            Outcome::Minus => Outcome::Plus,
        }
    }

    /// 0 for `+1`, 1 for `−1`.
    pub fn index(self) -> usize {
        match self {
            Outcome::Plus => 0,
            Outcome::Minus => 1,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Plus => "+1",
            Outcome::Minus => "-1",
        })
    }
}

impl Serialize for Outcome {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.sign())
    }
}

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Outcome::from_sign(i64::deserialize(d)?).map_err(D::Error::custom)
    }
}

/// Pauli basis index `i ∈ {1,2,3}` together with an eigenvalue `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawLabel", into = "RawLabel")]
pub struct MubLabel {
    basis: usize,
    outcome: Outcome,
}

#[derive(Serialize, Deserialize)]
struct RawLabel {
    i: usize,
    a: i64,
}

impl TryFrom<RawLabel> for MubLabel {
    type Error = Error;
    fn try_from(raw: RawLabel) -> Result<Self> {
        MubLabel::new(raw.i, Outcome::from_sign(raw.a)?)
    }
}

impl From<MubLabel> for RawLabel {
    fn from(l: MubLabel) -> Self {
        RawLabel { i: l.basis, a: l.outcome.sign() as i64 }
    }
}

impl MubLabel {
    pub fn new(basis: usize, outcome: Outcome) -> Result<Self> {
        check_basis(basis)?;
        Ok(Self { basis, outcome })
    }

    pub fn basis(&self) -> usize {
        self.basis
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    /// Eigenvector of `σ_basis` with eigenvalue `outcome`.
    pub fn ket<T: Real>(&self) -> [Complex<T>; 2] {
        let a = self.outcome.real::<T>();
        let z = T::zero();
        match self.basis {
            1 => bloch_ket(a, z, z),
            2 => bloch_ket(z, a, z),
            _ => bloch_ket(z, z, a),
        }
    }

    pub fn projector<T: Real>(&self) -> ComplexMatrix2<T> {
        let mut r = [T::zero(); 3];
        r[self.basis - 1] = self.outcome.real();
        let half = T::lit(0.5);
        ComplexMatrix2::from_pauli_coords([half, half * r[0], half * r[1], half * r[2]])
    }
}

impl fmt::Display for MubLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.basis, self.outcome)
    }
}

pub(crate) fn check_basis(i: usize) -> Result<()> {
    if (1..=3).contains(&i) {
        Ok(())
    } else {
        domain(format!("basis index must be 1, 2 or 3, got {i}"))
    }
}

/// A real 3-vector inside the unit ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector<T> {
    r: [T; 3],
}

impl<T: Real> BlochVector<T> {
    pub fn new(r: [T; 3], tol: &Tolerances) -> Result<Self> {
        if r.iter().any(|x| !x.is_finite()) {
            return invalid("Bloch vector has non-finite components");
        }
        let v = Self { r };
        if v.norm() > T::one() + tol.psd::<T>() {
            return invalid(format!("Bloch vector norm {} exceeds 1", v.norm()));
        }
        Ok(v)
    }

    pub fn components(&self) -> [T; 3] {
        self.r
    }

    pub fn norm(&self) -> T {
        self.r.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
    }
}

impl<T: Serialize + Copy> Serialize for BlochVector<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.r.serialize(s)
    }
}

impl<'de, T: Real + Deserialize<'de>> Deserialize<'de> for BlochVector<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = <[T; 3]>::deserialize(d)?;
        BlochVector::new(r, &Tolerances::default()).map_err(D::Error::custom)
    }
}

/// A qubit density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix<T> {
    matrix: ComplexMatrix2<T>,
}

impl<T: Real> DensityMatrix<T> {
    pub fn new(matrix: ComplexMatrix2<T>, tol: &Tolerances) -> Result<Self> {
        if !matrix.is_finite() {
            return invalid("density matrix has non-finite entries");
        }
        let herm = matrix.hermiticity_residual();
        if herm > tol.herm::<T>() {
            return invalid(format!("matrix is not Hermitian (residual {herm})"));
        }
        let tr = matrix.trace().re;
        if (tr - T::one()).abs() > tol.trace::<T>() {
            return invalid(format!("trace {tr} differs from 1"));
        }
        let [lo, _] = matrix.hermitian_eigenvalues();
        if lo < -tol.psd::<T>() {
            return invalid(format!("negative eigenvalue {lo}"));
        }
        Ok(Self { matrix })
    }

    /// Wraps a matrix known to be a valid state (produced by a CPTP map, etc.).
    pub(crate) fn new_unchecked(matrix: ComplexMatrix2<T>) -> Self {
        Self { matrix }
    }

    pub fn maximally_mixed() -> Self {
        Self::new_unchecked(ComplexMatrix2::identity().scale(T::lit(0.5)))
    }

    /// Eigenstate `|a, A_i⟩⟨a, A_i|` of the Pauli observable `σ_i`.
    pub fn mub_state(label: MubLabel) -> Self {
        Self::new_unchecked(label.projector())
    }

    /// `ρ = (I + r·σ)/2`.
    pub fn from_bloch(r: &BlochVector<T>) -> Self {
        let half = T::lit(0.5);
        let [x, y, z] = r.components();
        Self::new_unchecked(ComplexMatrix2::from_pauli_coords([half, half * x, half * y, half * z]))
    }

    pub fn bloch(&self) -> BlochVector<T> {
        let [_, x, y, z] = self.matrix.pauli_coords();
        let two = T::lit(2.0);
        BlochVector { r: [two * x, two * y, two * z] }
    }

    pub fn matrix(&self) -> &ComplexMatrix2<T> {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> [T; 2] {
        self.matrix.hermitian_eigenvalues()
    }

    pub fn purity(&self) -> T {
        (self.matrix * self.matrix).trace().re
    }

    /// `⟨a, A_i| ρ |a, A_i⟩ = (1 + a·r_i)/2`.
    ///
    /// The two outcomes of one basis are computed as `p` and `1 − p` with
    /// `p ≥ 1/2`, so their sum is exactly one in floating point.
    pub fn fidelity_to_pure(&self, label: MubLabel) -> T {
        let r = self.bloch().components()[label.basis() - 1];
        let r = r.max(-T::one()).min(T::one());
        let hi = (T::one() + r.abs()) * T::lit(0.5);
        let lo = T::one() - hi;
        let aligned = (r >= T::zero()) == (label.outcome() == Outcome::Plus);
        if aligned {
            hi
        } else {
            lo
        }
    }
}

impl<T: Serialize + Copy> Serialize for DensityMatrix<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.matrix.serialize(s)
    }
}

impl<'de, T: Real + Deserialize<'de>> Deserialize<'de> for DensityMatrix<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = ComplexMatrix2::<T>::deserialize(d)?;
        DensityMatrix::new(m, &Tolerances::default()).map_err(D::Error::custom)
    }
}

/// `density_from_bloch(bloch_from_density(ρ))`, validating the input first.
pub fn bloch_roundtrip<T: Real>(rho: &ComplexMatrix2<T>, tol: &Tolerances) -> Result<DensityMatrix<T>> {
    let rho = DensityMatrix::new(*rho, tol)?;
    Ok(DensityMatrix::from_bloch(&rho.bloch()))
}

/// Every `(i, a)` label for the given ordered list of bases.
pub fn labels_for(bases: &[usize]) -> Vec<MubLabel> {
    bases
        .iter()
        .flat_map(|&b| Outcome::BOTH.into_iter().map(move |a| MubLabel { basis: b, outcome: a }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    type M = ComplexMatrix2<f64>;

    fn label(i: usize, a: i64) -> MubLabel {
        MubLabel::new(i, Outcome::from_sign(a).unwrap()).unwrap()
    }

    fn close(a: &M, b: &M, tol: f64) -> bool {
        (*a - *b).frobenius_norm() <= tol
    }

    #[test]
    fn pauli_algebra() {
        let z = pauli::<f64>(3).unwrap();
        assert_eq!(z, M::from_real([[1.0, 0.0], [0.0, -1.0]]));
        for i in 1..=3 {
            let s = pauli::<f64>(i).unwrap();
            assert!(close(&(s * s), &M::identity(), 0.0));
            assert!(s.is_hermitian(0.0));
            assert_eq!(s.trace().norm(), 0.0);
        }
        let xy = pauli::<f64>(1).unwrap() * pauli::<f64>(2).unwrap();
        assert_eq!(xy.trace().norm(), 0.0);
        assert!(matches!(pauli::<f64>(0), Err(Error::Domain(_))));
        assert!(matches!(pauli::<f64>(4), Err(Error::Domain(_))));
    }

    #[test]
    fn mub_states() {
        let up = DensityMatrix::<f64>::mub_state(label(3, 1));
        assert!(close(up.matrix(), &M::from_real([[1.0, 0.0], [0.0, 0.0]]), 1e-15));
        let xm = DensityMatrix::<f64>::mub_state(label(1, -1));
        assert_eq!(xm.bloch().components(), [-1.0, 0.0, 0.0]);
        for l in labels_for(&[1, 2, 3]) {
            let rho = DensityMatrix::<f64>::mub_state(l);
            let s = pauli::<f64>(l.basis()).unwrap();
            let expect = (*rho.matrix() * s).trace();
            assert_abs_diff_eq!(expect.re, l.outcome().real::<f64>(), epsilon = 1e-15);
            assert_abs_diff_eq!(rho.purity(), 1.0, epsilon = 1e-15);
            // the ket agrees with the projector
            assert!(close(&outer(&l.ket::<f64>()), rho.matrix(), 1e-15));
        }
    }

    #[test]
    fn mutually_unbiased() {
        for l in labels_for(&[1, 2, 3]) {
            for k in labels_for(&[1, 2, 3]) {
                let (p, q) = (l.ket::<f64>(), k.ket::<f64>());
                let ov = (p[0].conj() * q[0] + p[1].conj() * q[1]).norm_sqr();
                let expect = if l.basis() != k.basis() {
                    0.5
                } else if l == k {
                    1.0
                } else {
                    0.0
                };
                assert_abs_diff_eq!(ov, expect, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn bloch_examples() {
        let tol = Tolerances::default();
        let mixed = DensityMatrix::<f64>::maximally_mixed();
        assert_eq!(mixed.bloch().components(), [0.0, 0.0, 0.0]);
        let rt = bloch_roundtrip(mixed.matrix(), &tol).unwrap();
        assert!(close(rt.matrix(), mixed.matrix(), 1e-15));

        let up = DensityMatrix::<f64>::mub_state(label(3, 1));
        assert_eq!(up.bloch().components(), [0.0, 0.0, 1.0]);

        let r = BlochVector::new([0.3, 0.0, 0.4], &tol).unwrap();
        let rho = DensityMatrix::from_bloch(&r);
        let [lo, hi] = rho.eigenvalues();
        assert_abs_diff_eq!(lo, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(hi, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn fidelity_examples() {
        for l in labels_for(&[1, 2, 3]) {
            let rho = DensityMatrix::<f64>::mub_state(l);
            assert_eq!(rho.fidelity_to_pure(l), 1.0);
            assert_eq!(DensityMatrix::<f64>::maximally_mixed().fidelity_to_pure(l), 0.5);
        }
        let up = DensityMatrix::<f64>::mub_state(label(3, 1));
        assert_eq!(up.fidelity_to_pure(label(1, 1)), 0.5);
    }

    #[test]
    fn rejects_invalid_states() {
        let tol = Tolerances::default();
        let not_unit = M::from_real([[1.0, 0.0], [0.0, 1.0]]);
        assert!(DensityMatrix::new(not_unit, &tol).is_err());
        let not_psd = M::from_real([[1.5, 0.0], [0.0, -0.5]]);
        assert!(DensityMatrix::new(not_psd, &tol).is_err());
        let not_herm = M::from_real([[0.5, 0.3], [0.0, 0.5]]);
        assert!(DensityMatrix::new(not_herm, &tol).is_err());
        assert!(M::new([[Complex::new(f64::NAN, 0.0); 2]; 2]).is_err());
        assert!(BlochVector::new([0.8, 0.8, 0.0], &tol).is_err());
        assert!(MubLabel::new(4, Outcome::Plus).is_err());
        assert!(Outcome::from_sign(0).is_err());
    }

    #[test]
    fn json_shapes() {
        let m = pauli::<f64>(2).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[[0.0,0.0],[0.0,-1.0]],[[0.0,1.0],[0.0,0.0]]]");
        let back: M = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        let r = DensityMatrix::<f64>::mub_state(label(1, -1)).bloch();
        assert_eq!(serde_json::to_string(&r).unwrap(), "[-1.0,0.0,0.0]");
        let l: MubLabel = serde_json::from_str(r#"{"i":2,"a":-1}"#).unwrap();
        assert_eq!(l, label(2, -1));
        assert!(serde_json::from_str::<MubLabel>(r#"{"i":2,"a":0}"#).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let rho = DensityMatrix::<f32>::mub_state(label(2, 1));
        assert_eq!(rho.fidelity_to_pure(label(2, 1)), 1.0f32);
        assert_eq!(rho.fidelity_to_pure(label(3, -1)), 0.5f32);
    }

    #[test]
    fn eigen_decomposition() {
        let tol = Tolerances::default();
        let r = BlochVector::new([0.2, -0.5, 0.1], &tol).unwrap();
        let m = DensityMatrix::<f64>::from_bloch(&r).matrix().scale(0.7);
        let (vals, vecs) = m.hermitian_eigen();
        let rebuilt = outer(&vecs[0]).scale(vals[0]) + outer(&vecs[1]).scale(vals[1]);
        assert!(close(&rebuilt, &m, 1e-14));
    }

    fn arb_state() -> impl Strategy<Value = DensityMatrix<f64>> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0.0f64..1.0).prop_map(|(x, y, z, len)| {
            let n = (x * x + y * y + z * z).sqrt().max(1e-12);
            let r = [x / n * len, y / n * len, z / n * len];
            DensityMatrix::from_bloch(&BlochVector::new(r, &Tolerances::default()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn fidelity_complement_is_exact(rho in arb_state(), basis in 1usize..=3) {
            let p = rho.fidelity_to_pure(label(basis, 1));
            let m = rho.fidelity_to_pure(label(basis, -1));
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert_eq!(p + m, 1.0);
        }

        #[test]
        fn bloch_roundtrip_is_identity(rho in arb_state()) {
            let back = bloch_roundtrip(rho.matrix(), &Tolerances::default()).unwrap();
            prop_assert!(close(back.matrix(), rho.matrix(), 1e-12));
        }
    }
}
