//! Path-ordered transport, the Mandelstam-Gross variables `B_{μ,s}` computed
//! from transported curvature and from holonomy variations, the
//! reconstruction map `T` and the adjoint-equivariance check.
//!
//! Transport convention: `P'(t) = -(A_μ γ̇^μ)(t) P(t)`, `P(0) = I`, so later
//! path points multiply on the left and `P(γ)⁻¹ δP(γ)/δγ(s)` only involves
//! the head `γ|[0,s]`. With this ordering
//! `P⁻¹ δP/δγ^μ(s) = -P_s⁻¹ F_{μν} γ̇^ν P_s`, hence [`MG_SIGN`].

use num_complex::Complex64;

use crate::connection::{curvature, ConnectionField};
use crate::extrap::{richardson, EVEN_ORDERS};
use crate::liealg::{exp_map, project_algebra, AlgebraElement, GroupElement};
use crate::loopgeom::{bump_deform, Curve, LoopPath, PathSegment, RadialLoop};
use crate::quadrature::gauss_legendre_on;
use crate::{LabError, Result};

/// Global sign relating transported curvature to `P⁻¹δP`, fixed by
/// calibrating `mg_transport` against `mg_fd`.
pub const MG_SIGN: f64 = -1.0;

fn segments(path: &dyn Curve, t0: f64, t1: f64) -> Vec<f64> {
    let mut pts = vec![t0];
    let mut inner: Vec<f64> = path
        .breakpoints()
        .into_iter()
        .chain(path.kinks())
        .filter(|&b| b > t0 && b < t1)
        .collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    pts.extend(inner);
    pts.push(t1);
    pts
}

/// Transport over `[t0, t1]` with about `steps` midpoint-exponential steps
/// per unit parameter; every smooth piece gets at least `steps/4` steps.
pub fn transport_interval(
    a: &ConnectionField,
    path: &dyn Curve,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<GroupElement> {
    if steps == 0 {
        return Err(LabError::config("steps", "must be at least 1"));
    }
    if path.dim() != a.dim() {
        return Err(LabError::DimensionMismatch {
            expected: a.dim(),
            got: path.dim(),
        });
    }
    let mut p = GroupElement::identity(a.n());
    if t1 <= t0 {
        return Ok(p);
    }
    let floor = steps.div_ceil(4).max(1);
    let pts = segments(path, t0, t1);
    for seg in pts.windows(2) {
        let (lo, hi) = (seg[0], seg[1]);
        let n = ((steps as f64) * (hi - lo)).ceil().max(floor as f64) as usize;
        let dt = (hi - lo) / n as f64;
        for k in 0..n {
            let tm = lo + (k as f64 + 0.5) * dt;
            let m = a.contract_unchecked(&path.position(tm), &path.tangent(tm))?;
            if !m.is_finite() {
                return Err(LabError::TransportDivergence(format!("connection not finite at t = {tm}")));
            }
            let step = exp_map(&m.scale(-dt)).map_err(|e| LabError::TransportDivergence(e.to_string()))?;
            p = step.mul(&p);
        }
    }
    Ok(p)
}

/// Holonomy `P(γ)` along the whole curve.
pub fn transport(a: &ConnectionField, path: &dyn Curve, steps: usize) -> Result<GroupElement> {
    transport_interval(a, path, 0.0, 1.0, steps)
}

/// `Tr P(γ) / N`.
pub fn wilson_loop(a: &ConnectionField, path: &dyn Curve, steps: usize) -> Result<Complex64> {
    let p = transport(a, path, steps)?;
    Ok(p.trace() / a.n() as f64)
}

/// Loop variable `B_{μ,s}(γ)` for μ = 1..D.
#[derive(Clone, Debug)]
pub struct MGSample {
    pub loop_path: LoopPath,
    pub s: f64,
    pub values: Vec<AlgebraElement>,
}

fn check_interior(s: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return Err(LabError::OutOfRange {
            name: "s",
            value: s,
            range: "(0, 1)".into(),
        });
    }
    Ok(())
}

/// Transported curvature on any curve: `σ P_s⁻¹ F_{μν}(γ(s)) γ̇^ν(s) P_s`.
pub fn mg_transport_curve(a: &ConnectionField, path: &dyn Curve, s: f64, steps: usize) -> Result<Vec<AlgebraElement>> {
    check_interior(s)?;
    let v = path.velocity(s)?;
    let p = transport_interval(a, path, 0.0, s, steps)?;
    transported_values(a, &path.position(s), &v, &p)
}

fn transported_values(a: &ConnectionField, x: &[f64], v: &[f64], p: &GroupElement) -> Result<Vec<AlgebraElement>> {
    let f = curvature(a, x, Some(1e-5))?;
    Ok(f.contract(v)
        .iter()
        .map(|c| p.inverse_adjoint_action(c).scale(MG_SIGN))
        .collect())
}

pub fn mg_transport(a: &ConnectionField, gamma: &LoopPath, s: f64, steps: usize) -> Result<MGSample> {
    Ok(MGSample {
        loop_path: gamma.clone(),
        s,
        values: mg_transport_curve(a, gamma, s, steps)?,
    })
}

/// `mg_transport` at every point of an increasing grid, reusing the partial
/// transports.
pub fn mg_transport_grid(
    a: &ConnectionField,
    gamma: &dyn Curve,
    grid: &[f64],
    steps: usize,
) -> Result<Vec<Vec<AlgebraElement>>> {
    let mut out = Vec::with_capacity(grid.len());
    let mut p = GroupElement::identity(a.n());
    let mut last = 0.0;
    for &s in grid {
        check_interior(s)?;
        if s < last {
            return Err(LabError::config("s_grid", "must be increasing"));
        }
        let v = gamma.velocity(s)?;
        let piece = transport_interval(a, gamma, last, s, steps)?;
        p = piece.mul(&p);
        last = s;
        out.push(transported_values(a, &gamma.position(s), &v, &p)?);
    }
    Ok(out)
}

/// Finite-difference controls for bump-smeared loop derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct FdParams {
    pub h: f64,
    pub w: f64,
    /// Number of bump widths `w, w/2, ...` fed to Richardson extrapolation.
    pub levels: usize,
    pub steps: usize,
}

impl Default for FdParams {
    fn default() -> Self {
        FdParams {
            h: 1e-4,
            w: 0.04,
            levels: 3,
            steps: 512,
        }
    }
}

/// `P(γ)⁻¹ [P(γ + hηe_μ) - P(γ - hηe_μ)] / 2h`, projected to the algebra.
pub fn mg_fd(a: &ConnectionField, gamma: &LoopPath, s: f64, mu: usize, h: f64, w: f64, steps: usize) -> Result<AlgebraElement> {
    check_interior(s)?;
    let p = transport(a, gamma, steps)?;
    let plus = transport(a, &bump_deform(gamma, s, mu, h, w)?, steps)?;
    let minus = transport(a, &bump_deform(gamma, s, mu, -h, w)?, steps)?;
    let diff = (plus.matrix() - minus.matrix()) / Complex64::new(2.0 * h, 0.0);
    project_algebra(&(p.inverse().matrix() * diff))
}

/// `mg_fd` extrapolated over bump widths `w, w/2, ...`.
pub fn mg_fd_extrapolated(a: &ConnectionField, gamma: &LoopPath, s: f64, mu: usize, fd: &FdParams) -> Result<AlgebraElement> {
    let vals = (0..fd.levels.max(1))
        .map(|j| mg_fd(a, gamma, s, mu, fd.h, fd.w / 2f64.powi(j as i32), fd.steps))
        .collect::<Result<Vec<_>>>()?;
    Ok(richardson(&vals, &EVEN_ORDERS))
}

/// An su(N)-valued 1-form on loop space, `(γ, s) ↦ (B_{1,s}(γ), ..., B_{D,s}(γ))`.
pub trait LoopForm: Sync {
    fn dim(&self) -> usize;
    fn n(&self) -> usize;
    fn eval(&self, gamma: &dyn Curve, s: f64) -> Result<Vec<AlgebraElement>>;
    fn declared_transverse(&self) -> bool {
        false
    }
    fn declared_nonanticipating(&self) -> bool {
        false
    }
}

/// The form `B(A)` built from transported curvature.
pub struct TransportedCurvature<'a> {
    pub field: &'a ConnectionField,
    pub steps: usize,
}

impl LoopForm for TransportedCurvature<'_> {
    fn dim(&self) -> usize {
        self.field.dim()
    }
    fn n(&self) -> usize {
        self.field.n()
    }
    fn eval(&self, gamma: &dyn Curve, s: f64) -> Result<Vec<AlgebraElement>> {
        mg_transport_curve(self.field, gamma, s, self.steps)
    }
    fn declared_transverse(&self) -> bool {
        true
    }
    fn declared_nonanticipating(&self) -> bool {
        true
    }
}

/// A form given by a closure.
pub struct FnForm<F> {
    pub dim: usize,
    pub n: usize,
    pub transverse: bool,
    pub nonanticipating: bool,
    pub provider: F,
}

impl<F> LoopForm for FnForm<F>
where
    F: Fn(&dyn Curve, f64) -> Result<Vec<AlgebraElement>> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn n(&self) -> usize {
        self.n
    }
    fn eval(&self, gamma: &dyn Curve, s: f64) -> Result<Vec<AlgebraElement>> {
        (self.provider)(gamma, s)
    }
    fn declared_transverse(&self) -> bool {
        self.transverse
    }
    fn declared_nonanticipating(&self) -> bool {
        self.nonanticipating
    }
}

/// `T(B)(x) = ∫_0^{1/2} B_{μ,s}(σ_x) 2s ds` by `quadrature_points`-point Gauss-Legendre.
pub fn t_map(b: &dyn LoopForm, x: &[f64], quadrature_points: usize) -> Result<Vec<AlgebraElement>> {
    if x.len() != b.dim() {
        return Err(LabError::DimensionMismatch {
            expected: b.dim(),
            got: x.len(),
        });
    }
    if quadrature_points == 0 {
        return Err(LabError::config("quadrature_points", "must be at least 1"));
    }
    let sigma = RadialLoop::new(x.to_vec());
    let mut out = vec![AlgebraElement::zero(b.n()); b.dim()];
    for (s, w) in gauss_legendre_on(quadrature_points, 0.0, 0.5) {
        let vals = b.eval(&sigma, s)?;
        for (o, v) in out.iter_mut().zip(&vals) {
            o.axpy(w * 2.0 * s, v);
        }
    }
    Ok(out)
}

/// Where the adjoint factor inside `T` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjointReading {
    /// `φ(σ_x)` on the whole loop at every `s`.
    WholeLoop,
    /// `φ(σ_x|[0,s])` on the truncation.
    Truncated,
}

/// ‖T(φBφ⁻¹)(x) − φ(σ_x) T(B)(x) φ(σ_x)⁻¹‖, max over components.
pub fn adjoint_equivariance_check(
    b: &dyn LoopForm,
    phi: &(dyn Fn(&dyn Curve) -> Result<GroupElement> + Sync),
    x: &[f64],
    reading: AdjointReading,
    quadrature_points: usize,
) -> Result<f64> {
    let transformed = FnForm {
        dim: b.dim(),
        n: b.n(),
        transverse: b.declared_transverse(),
        nonanticipating: b.declared_nonanticipating(),
        provider: |gamma: &dyn Curve, s: f64| -> Result<Vec<AlgebraElement>> {
            let g = match reading {
                AdjointReading::WholeLoop => phi(gamma)?,
                AdjointReading::Truncated => phi(&PathSegment::new(gamma, s)?)?,
            };
            Ok(b.eval(gamma, s)?.iter().map(|v| g.adjoint_action(v)).collect())
        },
    };
    let lhs = t_map(&transformed, x, quadrature_points)?;
    let g = phi(&RadialLoop::new(x.to_vec()))?;
    let rhs: Vec<AlgebraElement> = t_map(b, x, quadrature_points)?
        .iter()
        .map(|v| g.adjoint_action(v))
        .collect();
    Ok(lhs
        .iter()
        .zip(&rhs)
        .map(|(l, r)| (l - r).norm())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::{to_radial_gauge, Family};
    use crate::liealg::orthonormal_basis;
    use crate::loopgeom::OpenPath;
    use crate::quadrature::integrate;

    fn test_loop(d: usize) -> LoopPath {
        let modes = (0..d)
            .map(|k| vec![0.4 * (k as f64 + 1.0).cos(), 0.25 * (k as f64 * 1.3).sin(), 0.1])
            .collect();
        LoopPath::new(vec![0.1; d], modes).unwrap()
    }

    fn abelian2() -> (ConnectionField, AlgebraElement, f64) {
        let t = orthonormal_basis(2)[2].clone();
        let c = 1.3;
        (
            ConnectionField::abelian_constant_f(&[vec![0.0, c], vec![-c, 0.0]], t.clone()).unwrap(),
            t,
            c,
        )
    }

    #[test]
    fn zero_connection_transport_and_wilson() {
        let a = ConnectionField::zero(2, 3).unwrap();
        let g = test_loop(2);
        let p = transport(&a, &g, 32).unwrap();
        assert!(p.frobenius_distance_to_identity() == 0.0);
        assert_eq!(wilson_loop(&a, &g, 32).unwrap(), Complex64::new(1.0, 0.0));
        assert!(mg_transport(&a, &g, 0.4, 32).unwrap().values.iter().all(|v| v.norm() == 0.0));
        assert_eq!(mg_fd(&a, &g, 0.4, 0, 1e-3, 0.05, 32).unwrap().norm(), 0.0);
    }

    #[test]
    fn abelian_transport_matches_line_integral() {
        let (a, t, _) = abelian2();
        let path = OpenPath::new(vec![0.2, -0.1], vec![vec![0.5, 0.3], vec![-0.4, 0.6], vec![0.1, 0.2]]).unwrap();
        let line = integrate(
            |s| {
                let x = path.position(s);
                let v = path.tangent(s);
                let ax = a.eval(&x).unwrap();
                ax.iter().zip(&v).map(|(ai, vi)| ai.dot(&t) * vi).sum::<f64>()
            },
            0.0,
            1.0,
            16,
            8,
        );
        let want = exp_map(&t.scale(-line)).unwrap();
        let got = transport(&a, &path, 100_000).unwrap();
        assert!((got.matrix() - want.matrix()).norm() < 1e-10);
        assert!(got.is_valid(1e-10));
    }

    #[test]
    fn transport_converges_at_second_order() {
        let a = ConnectionField::polynomial_random(2, 2, 2, 0.9, 5).unwrap();
        let g = test_loop(2);
        let reference = transport(&a, &g, 1024).unwrap();
        let err = |n| (transport(&a, &g, n).unwrap().matrix() - reference.matrix()).norm();
        let ratio = err(32) / err(64);
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn abelian_mg_transport_closed_form() {
        let (a, t, c) = abelian2();
        let g = test_loop(2);
        let s = 0.37;
        let b = mg_transport(&a, &g, s, 64).unwrap();
        let v = g.tangent(s);
        let want0 = t.scale(MG_SIGN * c * v[1]);
        let want1 = t.scale(-MG_SIGN * c * v[0]);
        assert!((&b.values[0] - &want0).norm() < 1e-14);
        assert!((&b.values[1] - &want1).norm() < 1e-14);
    }

    #[test]
    fn mg_fd_matches_mg_transport_nonabelian() {
        let a = ConnectionField::polynomial_random(3, 2, 2, 0.7, 8).unwrap();
        let g = test_loop(3);
        let fd = FdParams::default();
        for (s, mu) in [(0.3, 0), (0.62, 2)] {
            let exact = &mg_transport(&a, &g, s, 4096).unwrap().values[mu];
            let est = mg_fd_extrapolated(&a, &g, s, mu, &fd).unwrap();
            let rel = (&est - exact).norm() / exact.norm();
            assert!(rel < 1e-3, "s={s} mu={mu} rel={rel}");
        }
    }

    #[test]
    fn transversality_and_grid_agree() {
        let a = ConnectionField::polynomial_random(3, 3, 2, 0.7, 1).unwrap();
        let g = test_loop(3);
        let grid = [0.1, 0.35, 0.5, 0.9];
        let rows = mg_transport_grid(&a, &g, &grid, 2048).unwrap();
        for (s, row) in grid.iter().zip(&rows) {
            let v = g.tangent(*s);
            let mut acc = AlgebraElement::zero(3);
            for (b, vi) in row.iter().zip(&v) {
                acc.axpy(*vi, b);
            }
            assert!(acc.norm() < 1e-12);
            let direct = mg_transport_curve(&a, &g, *s, 2048).unwrap();
            for (p, q) in row.iter().zip(&direct) {
                assert!((p - q).norm() < 1e-5, "s={s} {}", (p - q).norm());
            }
        }
    }

    #[test]
    fn t_map_inverts_abelian_and_radial_families() {
        let (a, _, _) = abelian2();
        let x = [0.4, -0.7];
        let form = TransportedCurvature { field: &a, steps: 64 };
        let rec = t_map(&form, &x, 8).unwrap();
        let want = a.eval(&x).unwrap();
        for (p, q) in rec.iter().zip(&want) {
            assert!((p - q).norm() < 1e-12);
        }
        let r = ConnectionField::radial_polynomial(3, 2, 2, 0.8, Some(1.2), 4).unwrap();
        assert_eq!(r.family(), Family::RadialPolynomial);
        let form = TransportedCurvature { field: &r, steps: 64 };
        let x = [0.5, 0.2, -0.4];
        let rec = t_map(&form, &x, 16).unwrap();
        let want = r.eval(&x).unwrap();
        for (p, q) in rec.iter().zip(&want) {
            assert!((p - q).norm() < 1e-10, "{}", (p - q).norm());
        }
    }

    #[test]
    fn wilson_loop_gauge_invariant() {
        let a = ConnectionField::polynomial_random(2, 2, 1, 0.6, 12).unwrap();
        let g = LoopPath::new(vec![0.2, 0.1], vec![vec![0.3, 0.1], vec![-0.2, 0.15]]).unwrap();
        let w = wilson_loop(&a, &g, 512).unwrap();
        let ag = to_radial_gauge(&a, 256).unwrap();
        let wg = wilson_loop(&ag, &g, 512).unwrap();
        assert!((w - wg).norm() < 1e-6, "{w} vs {wg}");
        assert!(w.norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn equivariance_with_whole_loop_factor() {
        let (a, _, _) = abelian2();
        let basis = orthonormal_basis(2);
        let phi = |gamma: &dyn Curve| -> Result<GroupElement> {
            let y = gamma.position(0.3);
            let mut x = basis[0].scale(0.7 + y[0]);
            x.axpy(1.1 * y[1], &basis[1]);
            exp_map(&x)
        };
        let form = TransportedCurvature { field: &a, steps: 64 };
        let r = adjoint_equivariance_check(&form, &phi, &[0.5, 0.3], AdjointReading::WholeLoop, 8).unwrap();
        assert!(r < 1e-12);
        let id = |_: &dyn Curve| Ok(GroupElement::identity(2));
        assert_eq!(adjoint_equivariance_check(&form, &id, &[0.5, 0.3], AdjointReading::Truncated, 8).unwrap(), 0.0);
    }
}
