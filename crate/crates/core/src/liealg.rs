//! Dense kernels for SU(N) and su(N).
//!
//! Algebra elements are anti-Hermitian traceless N×N complex matrices, group
//! elements are special unitary N×N matrices. N is a runtime parameter; the
//! rest of the crate exercises N ∈ {2, 3}.
//!
//! The inner product on su(N) is the positive-definite form `-Tr(XY)`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LabError, Result};

pub type CMat = DMatrix<Complex64>;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// An element of su(N).
#[derive(Clone, Debug, PartialEq)]
pub struct AlgebraElement {
    m: CMat,
}

/// An element of SU(N).
#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement {
    m: CMat,
}

fn all_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

impl AlgebraElement {
    pub fn zero(n: usize) -> Self {
        Self {
            m: CMat::zeros(n, n),
        }
    }

    /// Wraps a matrix without checking the su(N) invariants.
    pub fn from_matrix_unchecked(m: CMat) -> Self {
        debug_assert!(m.is_square());
        Self { m }
    }

    /// Wraps a matrix after checking anti-Hermiticity and tracelessness to `tol`.
    pub fn try_from_matrix(m: CMat, tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(LabError::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        if !all_finite(&m) {
            return Err(LabError::NumericInput("algebra element".into()));
        }
        let x = Self { m };
        let (herm, tr) = x.invariant_defects();
        if herm > tol || tr > tol {
            return Err(LabError::NumericInput(format!(
                "not in su(N): anti-Hermitian defect {herm:e}, trace {tr:e}"
            )));
        }
        Ok(x)
    }

    /// Builds `Σ_a c_a X_a` over a basis.
    pub fn from_coeffs(basis: &[AlgebraElement], coeffs: &[f64]) -> Self {
        assert_eq!(basis.len(), coeffs.len());
        let mut out = Self::zero(basis[0].n());
        for (b, &c) in basis.iter().zip(coeffs) {
            out.axpy(c, b);
        }
        out
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.m
    }

    pub fn into_matrix(self) -> CMat {
        self.m
    }

    /// Largest entry of `X + X†` and `|Tr X|`.
    pub fn invariant_defects(&self) -> (f64, f64) {
        let herm = (&self.m + self.m.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        (herm, self.m.trace().norm())
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let (h, t) = self.invariant_defects();
        h <= tol && t <= tol
    }

    /// `-Tr(XY)` without dimension checks.
    pub fn dot(&self, other: &AlgebraElement) -> f64 {
        let n = self.n();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let a = self.m[(i, j)];
                let b = other.m[(j, i)];
                acc += a.re * b.re - a.im * b.im;
            }
        }
        -acc
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self).max(0.0)
    }

    /// Norm induced by `-Tr(XY)`.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &AlgebraElement) {
        let a = Complex64::new(alpha, 0.0);
        self.m.zip_apply(&other.m, |x, y| *x += a * y);
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            m: &self.m * Complex64::new(alpha, 0.0),
        }
    }

    pub fn commutator(&self, other: &AlgebraElement) -> Self {
        Self {
            m: &self.m * &other.m - &other.m * &self.m,
        }
    }

    /// Coefficients against an orthonormal basis.
    pub fn coeffs(&self, basis: &[AlgebraElement]) -> Vec<f64> {
        basis.iter().map(|b| b.dot(self)).collect()
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.m)
    }
}

impl Add<&AlgebraElement> for &AlgebraElement {
    type Output = AlgebraElement;
    fn add(self, rhs: &AlgebraElement) -> AlgebraElement {
        AlgebraElement { m: &self.m + &rhs.m }
    }
}

impl Sub<&AlgebraElement> for &AlgebraElement {
    type Output = AlgebraElement;
    fn sub(self, rhs: &AlgebraElement) -> AlgebraElement {
        AlgebraElement { m: &self.m - &rhs.m }
    }
}

impl Add for AlgebraElement {
    type Output = AlgebraElement;
    fn add(self, rhs: AlgebraElement) -> AlgebraElement {
        AlgebraElement { m: self.m + rhs.m }
    }
}

impl Sub for AlgebraElement {
    type Output = AlgebraElement;
    fn sub(self, rhs: AlgebraElement) -> AlgebraElement {
        AlgebraElement { m: self.m - rhs.m }
    }
}

impl AddAssign<&AlgebraElement> for AlgebraElement {
    fn add_assign(&mut self, rhs: &AlgebraElement) {
        self.m += &rhs.m;
    }
}

impl Neg for AlgebraElement {
    type Output = AlgebraElement;
    fn neg(self) -> AlgebraElement {
        AlgebraElement { m: -self.m }
    }
}

impl Mul<f64> for &AlgebraElement {
    type Output = AlgebraElement;
    fn mul(self, rhs: f64) -> AlgebraElement {
        self.scale(rhs)
    }
}

impl GroupElement {
    pub fn identity(n: usize) -> Self {
        Self {
            m: CMat::identity(n, n),
        }
    }

    pub fn from_matrix_unchecked(m: CMat) -> Self {
        Self { m }
    }

    /// Wraps a matrix after checking unitarity and unit determinant to `tol`.
    pub fn try_from_matrix(m: CMat, tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(LabError::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        if !all_finite(&m) {
            return Err(LabError::NumericInput("group element".into()));
        }
        let g = Self { m };
        let (u, d) = g.invariant_defects();
        if u > tol || d > tol {
            return Err(LabError::NumericInput(format!(
                "not in SU(N): unitarity defect {u:e}, |det - 1| = {d:e}"
            )));
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.m
    }

    /// Max entry of `U†U - I` and `|det U - 1|`.
    pub fn invariant_defects(&self) -> (f64, f64) {
        let n = self.n();
        let u = (self.m.adjoint() * &self.m - CMat::identity(n, n))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        let d = (self.m.determinant() - Complex64::new(1.0, 0.0)).norm();
        (u, d)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let (u, d) = self.invariant_defects();
        u <= tol && d <= tol
    }

    /// Inverse, computed as the conjugate transpose.
    pub fn inverse(&self) -> Self {
        Self {
            m: self.m.adjoint(),
        }
    }

    pub fn mul(&self, other: &GroupElement) -> Self {
        Self {
            m: &self.m * &other.m,
        }
    }

    pub fn trace(&self) -> Complex64 {
        self.m.trace()
    }

    /// `U X U⁻¹`.
    pub fn adjoint_action(&self, x: &AlgebraElement) -> AlgebraElement {
        AlgebraElement {
            m: &self.m * &x.m * self.m.adjoint(),
        }
    }

    /// `U⁻¹ X U`.
    pub fn inverse_adjoint_action(&self, x: &AlgebraElement) -> AlgebraElement {
        AlgebraElement {
            m: self.m.adjoint() * &x.m * &self.m,
        }
    }

    /// Largest entry of `U - I`; a cheap distance to the identity.
    pub fn distance_to_identity(&self) -> f64 {
        let n = self.n();
        (&self.m - CMat::identity(n, n))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Frobenius norm of `U - I`.
    pub fn frobenius_distance_to_identity(&self) -> f64 {
        let n = self.n();
        (&self.m - CMat::identity(n, n)).norm()
    }
}

// Padé coefficients and 1-norm thresholds for scaling and squaring (Higham 2005).
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539398330063230e-1,
    9.504178996162932e-1,
    2.097847961257068e0,
    5.371920351148152e0,
];

fn one_norm(a: &CMat) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn pade_low(a: &CMat, b: &[f64]) -> (CMat, CMat) {
    let n = a.nrows();
    let id = CMat::identity(n, n);
    let a2 = a * a;
    let mut u = &id * real(b[1]);
    let mut v = &id * real(b[0]);
    let mut pow = id;
    let mut k = 2;
    while k < b.len() {
        pow = &pow * &a2;
        v += &pow * real(b[k]);
        if k + 1 < b.len() {
            u += &pow * real(b[k + 1]);
        }
        k += 2;
    }
    (a * u, v)
}

fn pade13(a: &CMat) -> (CMat, CMat) {
    let n = a.nrows();
    let b = &PADE13;
    let id = CMat::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * real(b[13]) + &a4 * real(b[11]) + &a2 * real(b[9]);
    let u = a
        * (&a6 * u_inner
            + &a6 * real(b[7])
            + &a4 * real(b[5])
            + &a2 * real(b[3])
            + &id * real(b[1]));
    let v_inner = &a6 * real(b[12]) + &a4 * real(b[10]) + &a2 * real(b[8]);
    let v = &a6 * v_inner + &a6 * real(b[6]) + &a4 * real(b[4]) + &a2 * real(b[2]) + &id * real(b[0]);
    (u, v)
}

/// Matrix exponential of an arbitrary square complex matrix by scaling and
/// squaring around a Padé approximant.
pub fn expm(a: &CMat) -> Result<CMat> {
    if !all_finite(a) {
        return Err(LabError::NumericInput("matrix exponential argument".into()));
    }
    let n = a.nrows();
    let norm = one_norm(a);
    if norm == 0.0 {
        return Ok(CMat::identity(n, n));
    }
    let (u, v, squarings) = if norm <= THETA[0] {
        let (u, v) = pade_low(a, &PADE3);
        (u, v, 0)
    } else if norm <= THETA[1] {
        let (u, v) = pade_low(a, &PADE5);
        (u, v, 0)
    } else if norm <= THETA[2] {
        let (u, v) = pade_low(a, &PADE7);
        (u, v, 0)
    } else if norm <= THETA[3] {
        let (u, v) = pade_low(a, &PADE9);
        (u, v, 0)
    } else {
        let s = ((norm / THETA[4]).log2().ceil()).max(0.0) as i32;
        let scaled = a * real(0.5f64.powi(s));
        let (u, v) = pade13(&scaled);
        (u, v, s)
    };
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| LabError::NumericInput("singular Padé denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// Exponential map su(N) → SU(N).
pub fn exp_map(x: &AlgebraElement) -> Result<GroupElement> {
    Ok(GroupElement { m: expm(&x.m)? })
}

/// Nearest su(N) element in Frobenius norm: `(M - M†)/2` with the trace removed.
pub fn project_algebra(m: &CMat) -> Result<AlgebraElement> {
    if !m.is_square() {
        return Err(LabError::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if !all_finite(m) {
        return Err(LabError::NumericInput("projection argument".into()));
    }
    Ok(project_unchecked(m))
}

pub(crate) fn project_unchecked(m: &CMat) -> AlgebraElement {
    let n = m.nrows();
    let mut a = (m - m.adjoint()) * real(0.5);
    let tr = a.trace() / real(n as f64);
    for i in 0..n {
        a[(i, i)] -= tr;
    }
    AlgebraElement { m: a }
}

/// `-Tr(XY)`, the positive-definite invariant inner product.
pub fn inner(x: &AlgebraElement, y: &AlgebraElement) -> Result<f64> {
    if x.n() != y.n() {
        return Err(LabError::DimensionMismatch {
            expected: x.n(),
            got: y.n(),
        });
    }
    Ok(x.dot(y))
}

/// Generalized Gell-Mann basis scaled to be orthonormal under `-Tr(XY)`.
pub fn orthonormal_basis(n: usize) -> Vec<AlgebraElement> {
    assert!(n >= 2, "su(N) needs N >= 2");
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::with_capacity(n * n - 1);
    for j in 0..n {
        for k in (j + 1)..n {
            let mut sym = CMat::zeros(n, n);
            sym[(j, k)] = I * s;
            sym[(k, j)] = I * s;
            out.push(AlgebraElement { m: sym });
            let mut anti = CMat::zeros(n, n);
            anti[(j, k)] = real(s);
            anti[(k, j)] = real(-s);
            out.push(AlgebraElement { m: anti });
        }
    }
    for l in 1..n {
        let c = (2.0 / (l * (l + 1)) as f64).sqrt() * s;
        let mut d = CMat::zeros(n, n);
        for j in 0..l {
            d[(j, j)] = I * c;
        }
        d[(l, l)] = I * (-(l as f64) * c);
        out.push(AlgebraElement { m: d });
    }
    out
}

/// Haar-distributed SU(N) element: QR of a complex Ginibre matrix with the
/// phase convention fixed, followed by removal of the determinant phase.
pub fn haar_sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> GroupElement {
    assert!(n >= 2);
    let z = CMat::from_fn(n, n, |_, _| {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        Complex64::new(a, b) * std::f64::consts::FRAC_1_SQRT_2
    });
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { real(1.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    let det = q.determinant();
    let root = Complex64::from_polar(1.0, -det.arg() / n as f64);
    GroupElement { m: q * root }
}

/// Uniformly random algebra element with Gaussian coefficients of scale `sigma`.
pub fn gaussian_algebra<R: Rng + ?Sized>(
    basis: &[AlgebraElement],
    sigma: f64,
    rng: &mut R,
) -> AlgebraElement {
    let coeffs: Vec<f64> = basis
        .iter()
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    AlgebraElement::from_coeffs(basis, &coeffs)
}

/// Real matrix of `ad_X = [X, ·]` in an orthonormal basis. It is antisymmetric
/// because the inner product is adjoint-invariant.
pub fn ad_matrix(x: &AlgebraElement, basis: &[AlgebraElement]) -> DMatrix<f64> {
    let d = basis.len();
    let mut m = DMatrix::zeros(d, d);
    for (j, b) in basis.iter().enumerate() {
        let c = x.commutator(b);
        for (i, bi) in basis.iter().enumerate() {
            m[(i, j)] = bi.dot(&c);
        }
    }
    m
}

/// Density of Haar measure in exponential coordinates relative to Lebesgue
/// measure on the algebra, normalized to 1 at the origin:
/// `det((1 - e^{-ad X}) / ad X) = Π sinc²(λ/2)` over the rotation angles of `ad X`.
pub fn haar_density_exp_coords(x: &AlgebraElement, basis: &[AlgebraElement]) -> f64 {
    let ad = ad_matrix(x, basis);
    let neg_sq = -(&ad * &ad);
    let sym = (&neg_sq + neg_sq.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    eig.eigenvalues
        .iter()
        .map(|&k| {
            let lam = k.max(0.0).sqrt();
            let h = 0.5 * lam;
            if h < 1e-8 {
                1.0 - h * h / 6.0
            } else {
                h.sin() / h
            }
        })
        .product()
}

/// Principal logarithm SU(N) → su(N).
///
/// Fails with [`LabError::LogBranch`] when an eigen-angle reaches ±π, or when
/// the principal logarithm is not traceless (possible for N ≥ 3).
pub fn log_map(u: &GroupElement) -> Result<AlgebraElement> {
    log_map_labeled(u, "element")
}

pub(crate) fn log_map_labeled(u: &GroupElement, label: &str) -> Result<AlgebraElement> {
    if !all_finite(&u.m) {
        return Err(LabError::NumericInput("logarithm argument".into()));
    }
    let n = u.n();
    const EDGE: f64 = std::f64::consts::PI - 1e-9;
    if n == 2 {
        let a0 = 0.5 * u.m.trace().re;
        // U = cos θ + i sin θ n·σ, so the projection is i sin θ n·σ with
        // squared norm 2 sin²θ.
        let v = project_unchecked(&u.m);
        let amp = (0.5 * v.norm_sq()).sqrt();
        let theta = amp.atan2(a0);
        if theta > EDGE {
            return Err(LabError::LogBranch {
                link: label.to_string(),
                angle: theta,
            });
        }
        let factor = if amp < 1e-300 {
            1.0
        } else if amp < 1e-8 {
            1.0 + amp * amp / 6.0
        } else {
            theta / amp
        };
        return Ok(v.scale(factor));
    }
    let schur = nalgebra::Schur::new(u.m.clone());
    let (q, t) = schur.unpack();
    let mut angles = DVector::<f64>::zeros(n);
    for i in 0..n {
        angles[i] = t[(i, i)].arg();
    }
    let max_angle = angles.iter().map(|a| a.abs()).fold(0.0, f64::max);
    if max_angle > EDGE {
        return Err(LabError::LogBranch {
            link: label.to_string(),
            angle: max_angle,
        });
    }
    if angles.sum().abs() > 1e-8 {
        return Err(LabError::LogBranch {
            link: format!("{label} (principal logarithm not traceless)"),
            angle: max_angle,
        });
    }
    let d = CMat::from_diagonal(&angles.map(|a| I * a));
    Ok(project_unchecked(&(&q * d * q.adjoint())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_abs(m: &CMat) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn random_algebra(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> AlgebraElement {
        gaussian_algebra(&orthonormal_basis(n), scale, rng)
    }

    /// Taylor series with pre-scaling, used only as an exponential oracle.
    fn taylor_exp_oracle(a: &CMat) -> CMat {
        let n = a.nrows();
        let norm = one_norm(a);
        let s = if norm > 0.5 {
            (norm / 0.5).log2().ceil() as i32
        } else {
            0
        };
        let b = a * real(0.5f64.powi(s));
        let mut term = CMat::identity(n, n);
        let mut sum = term.clone();
        for k in 1..50 {
            term = &term * &b * real(1.0 / k as f64);
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn exp_of_zero_is_identity() {
        for n in [2, 3] {
            let g = exp_map(&AlgebraElement::zero(n)).unwrap();
            assert_eq!(g, GroupElement::identity(n));
        }
    }

    #[test]
    fn exp_inverse_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [2, 3] {
            for _ in 0..20 {
                let x = random_algebra(n, 2.0, &mut rng);
                let g = exp_map(&x).unwrap();
                let h = exp_map(&(-x.clone())).unwrap();
                let d = max_abs(&(g.matrix() * h.matrix() - CMat::identity(n, n)));
                assert!(d < 1e-12, "{d}");
            }
        }
    }

    #[test]
    fn exp_matches_taylor_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for scale in [0.001, 0.1, 1.0, 5.0] {
            for _ in 0..10 {
                let x = random_algebra(3, scale, &mut rng);
                let got = exp_map(&x).unwrap();
                let want = taylor_exp_oracle(x.matrix());
                let d = max_abs(&(got.matrix() - want));
                assert!(d < 1e-12, "scale {scale}: {d}");
            }
        }
    }

    #[test]
    fn exp_output_in_group_for_large_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 3] {
            for _ in 0..20 {
                let mut x = random_algebra(n, 1.0, &mut rng);
                x = x.scale(50.0 / x.norm());
                assert!(exp_map(&x).unwrap().is_valid(1e-10));
            }
        }
    }

    #[test]
    fn exp_rejects_non_finite() {
        let mut m = CMat::zeros(2, 2);
        m[(0, 1)] = Complex64::new(f64::NAN, 0.0);
        let x = AlgebraElement::from_matrix_unchecked(m);
        assert!(matches!(exp_map(&x), Err(LabError::NumericInput(_))));
    }

    #[test]
    fn projection_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_algebra(3, 1.0, &mut rng);
        let p = project_algebra(x.matrix()).unwrap();
        assert!(max_abs(&(p.matrix() - x.matrix())) < 1e-15);
        let p = project_algebra(&CMat::identity(3, 3)).unwrap();
        assert!(max_abs(p.matrix()) < 1e-15);
    }

    #[test]
    fn projection_matches_least_squares_over_basis() {
        // Nearest point in the real span of an orthonormal (Frobenius-
        // orthogonal) basis: coefficient = Re<B_a, M>_F / |B_a|².
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [2, 3] {
            let basis = orthonormal_basis(n);
            let m = CMat::from_fn(n, n, |_, _| {
                Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
            });
            let mut oracle = CMat::zeros(n, n);
            for b in &basis {
                let num: f64 = b
                    .matrix()
                    .iter()
                    .zip(m.iter())
                    .map(|(x, y)| (x.conj() * y).re)
                    .sum();
                let den: f64 = b.matrix().iter().map(|x| x.norm_sqr()).sum();
                oracle += b.matrix() * real(num / den);
            }
            let p = project_algebra(&m).unwrap();
            assert!(max_abs(&(p.matrix() - oracle)) < 1e-13);
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = CMat::from_fn(3, 3, |_, _| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let p1 = project_algebra(&m).unwrap();
        let p2 = project_algebra(p1.matrix()).unwrap();
        assert!(max_abs(&(p1.matrix() - p2.matrix())) < 1e-14);
    }

    #[test]
    fn inner_product_on_half_pauli_basis() {
        let sx = CMat::from_row_slice(2, 2, &[real(0.0), real(1.0), real(1.0), real(0.0)]);
        let sy = CMat::from_row_slice(2, 2, &[real(0.0), -I, I, real(0.0)]);
        let sz = CMat::from_row_slice(2, 2, &[real(1.0), real(0.0), real(0.0), real(-1.0)]);
        let xs: Vec<AlgebraElement> = [sx, sy, sz]
            .iter()
            .map(|s| AlgebraElement::from_matrix_unchecked(s * (I * 0.5)))
            .collect();
        for (a, xa) in xs.iter().enumerate() {
            for (b, xb) in xs.iter().enumerate() {
                let want = if a == b { 0.5 } else { 0.0 };
                assert!((inner(xa, xb).unwrap() - want).abs() < 1e-15);
            }
        }
        assert_eq!(inner(&xs[0], &AlgebraElement::zero(2)).unwrap(), 0.0);
    }

    #[test]
    fn inner_product_dimension_mismatch() {
        let e = inner(&AlgebraElement::zero(2), &AlgebraElement::zero(3)).unwrap_err();
        assert_eq!(e, LabError::DimensionMismatch { expected: 2, got: 3 });
    }

    #[test]
    fn basis_is_orthonormal_and_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2, 3, 4] {
            let basis = orthonormal_basis(n);
            assert_eq!(basis.len(), n * n - 1);
            for (i, a) in basis.iter().enumerate() {
                assert!(a.is_valid(1e-15));
                for (j, b) in basis.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((a.dot(b) - want).abs() < 1e-12);
                }
            }
            let x = random_algebra(n, 1.0, &mut rng);
            let back = AlgebraElement::from_coeffs(&basis, &x.coeffs(&basis));
            assert!(max_abs(&(back.matrix() - x.matrix())) < 1e-12);
        }
    }

    #[test]
    fn haar_is_deterministic_and_special_unitary() {
        let a = haar_sample(3, &mut ChaCha8Rng::seed_from_u64(9));
        let b = haar_sample(3, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.is_valid(1e-10));
    }

    #[test]
    fn log_inverts_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for n in [2, 3] {
            for _ in 0..20 {
                let x = random_algebra(n, 0.5, &mut rng);
                let back = log_map(&exp_map(&x).unwrap()).unwrap();
                assert!(max_abs(&(back.matrix() - x.matrix())) < 1e-10);
            }
        }
    }

    #[test]
    fn log_branch_error_near_minus_identity() {
        let basis = orthonormal_basis(2);
        // exp(iπσ_z) = -I sits on the branch cut.
        let x = basis[2].scale(std::f64::consts::PI * 2f64.sqrt());
        let e = log_map_labeled(&exp_map(&x).unwrap(), "probe");
        assert!(matches!(e, Err(LabError::LogBranch { .. })));
    }

    #[test]
    fn haar_density_matches_su2_closed_form() {
        // For SU(2) with eigen-angles ±α the density is (sin α / α)².
        let basis = orthonormal_basis(2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let x = random_algebra(2, 1.0, &mut rng);
            let alpha = (0.5 * x.norm_sq()).sqrt();
            let want = (alpha.sin() / alpha).powi(2);
            assert!((haar_density_exp_coords(&x, &basis) - want).abs() < 1e-12);
        }
    }
}
