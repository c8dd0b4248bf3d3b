//! Test connections on R^D, their curvature, the radial gauge, the action
//! density and the equations-of-motion residuals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::extrap::{richardson, ALL_ORDERS};
use crate::holonomy::{transport, transport_interval};
use crate::liealg::{gaussian_algebra, orthonormal_basis, AlgebraElement, GroupElement};
use crate::loopgeom::{Curve, EndRamp, OpenPath};
use crate::quadrature::gauss_legendre_on;
use crate::{LabError, Result};

/// Family tag of a connection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Zero,
    AbelianConstantF,
    PolynomialRandom,
    GaussianBump,
    RadialPolynomial,
    MaxwellPolynomial,
    /// Radial-gauge transform of another family.
    RadialGauge,
}

impl Family {
    pub const NAMES: [&'static str; 6] = [
        "zero",
        "abelian_constant_F",
        "polynomial_random",
        "gaussian_bump",
        "radial_polynomial",
        "maxwell_polynomial",
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Zero => "zero",
            Family::AbelianConstantF => "abelian_constant_F",
            Family::PolynomialRandom => "polynomial_random",
            Family::GaussianBump => "gaussian_bump",
            Family::RadialPolynomial => "radial_polynomial",
            Family::MaxwellPolynomial => "maxwell_polynomial",
            Family::RadialGauge => "radial_gauge",
        }
    }

    pub fn parse(name: &str) -> Option<Family> {
        Some(match name {
            "zero" => Family::Zero,
            "abelian_constant_F" => Family::AbelianConstantF,
            "polynomial_random" => Family::PolynomialRandom,
            "gaussian_bump" => Family::GaussianBump,
            "radial_polynomial" => Family::RadialPolynomial,
            "maxwell_polynomial" => Family::MaxwellPolynomial,
            _ => return None,
        })
    }
}

/// `x^α exp(-|x - c|² / r²)`, envelope optional.
#[derive(Clone, Debug)]
struct Scalar {
    exps: Vec<u32>,
    envelope: Option<(Vec<f64>, f64)>,
}

impl Scalar {
    fn monomial(exps: Vec<u32>) -> Self {
        Scalar { exps, envelope: None }
    }

    fn value_grad(&self, x: &[f64], want_grad: bool, grad: &mut [f64]) -> f64 {
        let d = x.len();
        let mut mono = 1.0;
        for (xi, &e) in x.iter().zip(&self.exps) {
            mono *= xi.powi(e as i32);
        }
        let env = match &self.envelope {
            Some((c, inv_r2)) => {
                let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                (-r2 * inv_r2).exp()
            }
            None => 1.0,
        };
        if want_grad {
            for nu in 0..d {
                let e = self.exps[nu];
                let mut dm = 0.0;
                if e > 0 {
                    dm = e as f64;
                    for (k, (xk, &ek)) in x.iter().zip(&self.exps).enumerate() {
                        let p = if k == nu { ek - 1 } else { ek };
                        dm *= xk.powi(p as i32);
                    }
                }
                let mut g = dm * env;
                if let Some((c, inv_r2)) = &self.envelope {
                    g += mono * env * (-2.0 * (x[nu] - c[nu]) * inv_r2);
                }
                grad[nu] = g;
            }
        }
        mono * env
    }
}

/// `A_μ(x) = Σ_t s_t(x) X_{μ,t}` for scalar functions with analytic gradients.
#[derive(Clone, Debug)]
struct TermField {
    scalars: Vec<Scalar>,
    /// (component μ, scalar index, coefficient)
    terms: Vec<(usize, usize, AlgebraElement)>,
}

#[derive(Clone, Debug)]
struct RadialGauged {
    original: ConnectionField,
    steps: usize,
    fd_step: f64,
}

#[derive(Clone, Debug)]
enum Repr {
    Terms(TermField),
    Gauged(Box<RadialGauged>),
}

/// An su(N)-valued 1-form on R^D.
#[derive(Clone, Debug)]
pub struct ConnectionField {
    dim: usize,
    n: usize,
    family: Family,
    repr: Repr,
}

/// Antisymmetric array `F_{μν}` at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureTensor {
    dim: usize,
    comps: Vec<AlgebraElement>,
}

impl CurvatureTensor {
    /// Builds the tensor from its upper triangle; `upper(μ, ν)` is called for μ < ν.
    pub fn from_upper<F: FnMut(usize, usize) -> AlgebraElement>(dim: usize, n: usize, mut upper: F) -> Self {
        let mut comps = vec![AlgebraElement::zero(n); dim * dim];
        for mu in 0..dim {
            for nu in (mu + 1)..dim {
                let f = upper(mu, nu);
                comps[nu * dim + mu] = -f.clone();
                comps[mu * dim + nu] = f;
            }
        }
        CurvatureTensor { dim, comps }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, mu: usize, nu: usize) -> &AlgebraElement {
        &self.comps[mu * self.dim + nu]
    }

    /// `Σ_ν F_{μν} v^ν` for each μ.
    pub fn contract(&self, v: &[f64]) -> Vec<AlgebraElement> {
        let n = self.comps[0].n();
        (0..self.dim)
            .map(|mu| {
                let mut acc = AlgebraElement::zero(n);
                for (nu, &vn) in v.iter().enumerate() {
                    if nu != mu && vn != 0.0 {
                        acc.axpy(vn, self.get(mu, nu));
                    }
                }
                acc
            })
            .collect()
    }

    /// `Σ_{μ,ρ} (-Tr)(F_{μρ} F_{μρ})`.
    pub fn density(&self) -> f64 {
        self.comps.iter().map(AlgebraElement::norm_sq).sum()
    }

    pub fn max_norm(&self) -> f64 {
        self.comps.iter().map(AlgebraElement::norm).fold(0.0, f64::max)
    }

    pub fn conjugate_inverse(&self, g: &GroupElement) -> Self {
        CurvatureTensor {
            dim: self.dim,
            comps: self.comps.iter().map(|f| g.inverse_adjoint_action(f)).collect(),
        }
    }
}

fn monomials(dim: usize, max_degree: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; dim]];
    for _ in 0..max_degree {
        let mut next = Vec::new();
        for m in &out {
            for k in 0..dim {
                let mut e = m.clone();
                e[k] += 1;
                if !out.contains(&e) && !next.contains(&e) {
                    next.push(e);
                }
            }
        }
        out.extend(next);
    }
    out
}

fn unit(dim: usize, k: usize) -> Vec<u32> {
    let mut e = vec![0; dim];
    e[k] = 1;
    e
}

fn check_dims(dim: usize, n: usize) -> Result<()> {
    if dim < 2 {
        return Err(LabError::OutOfRange {
            name: "dim",
            value: dim as f64,
            range: "[2, inf)".into(),
        });
    }
    if n < 2 {
        return Err(LabError::OutOfRange {
            name: "n",
            value: n as f64,
            range: "[2, inf)".into(),
        });
    }
    Ok(())
}

impl ConnectionField {
    fn from_terms(dim: usize, n: usize, family: Family, field: TermField) -> Self {
        ConnectionField {
            dim,
            n,
            family,
            repr: Repr::Terms(field),
        }
    }

    pub fn zero(dim: usize, n: usize) -> Result<Self> {
        check_dims(dim, n)?;
        Ok(Self::from_terms(
            dim,
            n,
            Family::Zero,
            TermField {
                scalars: Vec::new(),
                terms: Vec::new(),
            },
        ))
    }

    /// `A_μ(x) = -½ f_{μν} x^ν T`, whose curvature is `f_{μν} T`.
    pub fn abelian_constant_f(f: &[Vec<f64>], generator: AlgebraElement) -> Result<Self> {
        let dim = f.len();
        let n = generator.n();
        check_dims(dim, n)?;
        for (mu, row) in f.iter().enumerate() {
            if row.len() != dim {
                return Err(LabError::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            for nu in 0..dim {
                if (row[nu] + f[nu][mu]).abs() > 1e-14 || !row[nu].is_finite() {
                    return Err(LabError::NumericInput("field strength matrix must be antisymmetric".into()));
                }
            }
        }
        let scalars: Vec<Scalar> = (0..dim).map(|k| Scalar::monomial(unit(dim, k))).collect();
        let mut terms = Vec::new();
        for mu in 0..dim {
            for nu in 0..dim {
                if f[mu][nu] != 0.0 {
                    terms.push((mu, nu, generator.scale(-0.5 * f[mu][nu])));
                }
            }
        }
        Ok(Self::from_terms(dim, n, Family::AbelianConstantF, TermField { scalars, terms }))
    }

    /// Random polynomial connection: every monomial of degree ≤ `degree`
    /// carries a Gaussian algebra coefficient of scale `scale`.
    pub fn polynomial_random(dim: usize, n: usize, degree: u32, scale: f64, seed: u64) -> Result<Self> {
        check_dims(dim, n)?;
        let basis = orthonormal_basis(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scalars: Vec<Scalar> = monomials(dim, degree).into_iter().map(Scalar::monomial).collect();
        let mut terms = Vec::new();
        for mu in 0..dim {
            for t in 0..scalars.len() {
                terms.push((mu, t, gaussian_algebra(&basis, scale, &mut rng)));
            }
        }
        Ok(Self::from_terms(dim, n, Family::PolynomialRandom, TermField { scalars, terms }))
    }

    /// `A_μ(x) = C_μ exp(-|x - c|²/r²)` with random `C_μ`.
    pub fn gaussian_bump(n: usize, center: &[f64], radius: f64, scale: f64, seed: u64) -> Result<Self> {
        let dim = center.len();
        check_dims(dim, n)?;
        if !(radius > 0.0) {
            return Err(LabError::OutOfRange {
                name: "radius",
                value: radius,
                range: "(0, inf)".into(),
            });
        }
        let basis = orthonormal_basis(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scalars = vec![Scalar {
            exps: vec![0; dim],
            envelope: Some((center.to_vec(), 1.0 / (radius * radius))),
        }];
        let terms = (0..dim)
            .map(|mu| (mu, 0, gaussian_algebra(&basis, scale, &mut rng)))
            .collect();
        Ok(Self::from_terms(dim, n, Family::GaussianBump, TermField { scalars, terms }))
    }

    /// Connection already in radial gauge: `A_μ = Σ_ν x^ν W_{νμ}(x)` with `W`
    /// antisymmetric, polynomial of degree `degree - 1`, optionally times
    /// `exp(-|x|²/r²)`.
    pub fn radial_polynomial(
        dim: usize,
        n: usize,
        degree: u32,
        scale: f64,
        envelope_radius: Option<f64>,
        seed: u64,
    ) -> Result<Self> {
        check_dims(dim, n)?;
        if degree == 0 {
            return Err(LabError::config("degree", "radial family needs degree >= 1"));
        }
        let basis = orthonormal_basis(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let envelope = envelope_radius.map(|r| (vec![0.0; dim], 1.0 / (r * r)));
        let mut scalars: Vec<Scalar> = Vec::new();
        let index = |exps: Vec<u32>, scalars: &mut Vec<Scalar>| -> usize {
            if let Some(i) = scalars.iter().position(|s| s.exps == exps) {
                return i;
            }
            scalars.push(Scalar {
                exps,
                envelope: envelope.clone(),
            });
            scalars.len() - 1
        };
        let mut terms = Vec::new();
        for nu in 0..dim {
            for mu in (nu + 1)..dim {
                for beta in monomials(dim, degree - 1) {
                    let e = gaussian_algebra(&basis, scale, &mut rng);
                    let mut a = beta.clone();
                    a[nu] += 1;
                    let mut b = beta;
                    b[mu] += 1;
                    let ia = index(a, &mut scalars);
                    let ib = index(b, &mut scalars);
                    // x^ν W_{νμ} on component μ and x^μ W_{μν} = -x^μ W_{νμ} on ν.
                    terms.push((mu, ia, e.clone()));
                    terms.push((nu, ib, -e));
                }
            }
        }
        Ok(Self::from_terms(dim, n, Family::RadialPolynomial, TermField { scalars, terms }))
    }

    /// Abelian source-free solution with non-constant curvature:
    /// `A_D = c x¹ x² T`, harmonic and divergence free. Needs D ≥ 3.
    pub fn maxwell_polynomial(dim: usize, c: f64, generator: AlgebraElement) -> Result<Self> {
        let n = generator.n();
        check_dims(dim, n)?;
        if dim < 3 {
            return Err(LabError::config("dim", "maxwell_polynomial needs dim >= 3"));
        }
        let mut exps = vec![0; dim];
        exps[0] = 1;
        exps[1] = 1;
        let field = TermField {
            scalars: vec![Scalar::monomial(exps)],
            terms: vec![(dim - 1, 0, generator.scale(c))],
        };
        Ok(Self::from_terms(dim, n, Family::MaxwellPolynomial, field))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn has_analytic_curvature(&self) -> bool {
        true
    }

    /// `(A_1(x), ..., A_D(x))`.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<AlgebraElement>> {
        self.check_point(x)?;
        let a = match &self.repr {
            Repr::Terms(t) => self.eval_terms(t, x, None),
            Repr::Gauged(g) => g.eval(x)?,
        };
        if a.iter().any(|e| !e.is_finite()) {
            return Err(LabError::NumericInput(format!("connection not finite at {x:?}")));
        }
        Ok(a)
    }

    /// `Σ_μ A_μ(x) v^μ`, skipping validation; used by the transport integrator.
    pub(crate) fn contract_unchecked(&self, x: &[f64], v: &[f64]) -> Result<AlgebraElement> {
        match &self.repr {
            Repr::Terms(t) => {
                let mut acc = AlgebraElement::zero(self.n);
                let mut vals = Vec::with_capacity(t.scalars.len());
                for s in &t.scalars {
                    vals.push(s.value_grad(x, false, &mut []));
                }
                for (mu, si, c) in &t.terms {
                    let w = vals[*si] * v[*mu];
                    if w != 0.0 {
                        acc.axpy(w, c);
                    }
                }
                Ok(acc)
            }
            Repr::Gauged(g) => {
                let a = g.eval(x)?;
                let mut acc = AlgebraElement::zero(self.n);
                for (ai, vi) in a.iter().zip(v) {
                    acc.axpy(*vi, ai);
                }
                Ok(acc)
            }
        }
    }

    fn eval_terms(&self, t: &TermField, x: &[f64], mut grad: Option<&mut Vec<Vec<AlgebraElement>>>) -> Vec<AlgebraElement> {
        let mut a = vec![AlgebraElement::zero(self.n); self.dim];
        let mut g = vec![0.0; self.dim];
        let mut vals = Vec::with_capacity(t.scalars.len());
        let mut grads = Vec::with_capacity(t.scalars.len());
        for s in &t.scalars {
            vals.push(s.value_grad(x, grad.is_some(), &mut g));
            grads.push(g.clone());
        }
        for (mu, si, c) in &t.terms {
            a[*mu].axpy(vals[*si], c);
            if let Some(dg) = grad.as_deref_mut() {
                for nu in 0..self.dim {
                    let w = grads[*si][nu];
                    if w != 0.0 {
                        dg[nu][*mu].axpy(w, c);
                    }
                }
            }
        }
        a
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(LabError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(LabError::NumericInput("non-finite point".into()));
        }
        Ok(())
    }

    /// Analytic curvature `∂_μA_ν - ∂_νA_μ + [A_μ, A_ν]`.
    pub fn analytic_curvature(&self, x: &[f64]) -> Result<CurvatureTensor> {
        self.check_point(x)?;
        let f = match &self.repr {
            Repr::Terms(t) => {
                let mut da = vec![vec![AlgebraElement::zero(self.n); self.dim]; self.dim];
                let a = self.eval_terms(t, x, Some(&mut da));
                // da[ν][μ] = ∂_ν A_μ
                CurvatureTensor::from_upper(self.dim, self.n, |mu, nu| {
                    let mut f = &da[mu][nu] - &da[nu][mu];
                    f += &a[mu].commutator(&a[nu]);
                    f
                })
            }
            Repr::Gauged(g) => {
                let f = g.original.analytic_curvature(x)?;
                let h = g.ray_transport(x)?;
                f.conjugate_inverse(&h)
            }
        };
        if f.comps.iter().any(|c| !c.is_finite()) {
            return Err(LabError::NumericInput(format!("curvature not finite at {x:?}")));
        }
        Ok(f)
    }
}

impl RadialGauged {
    fn ray_transport(&self, x: &[f64]) -> Result<GroupElement> {
        transport(&self.original, &OpenPath::ray(x), self.steps)
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<AlgebraElement>> {
        let a = self.original.eval(x)?;
        let g = self.ray_transport(x)?;
        let ginv = g.inverse();
        let scale = 1f64.max(x.iter().fold(0.0, |m: f64, c| m.max(c.abs())));
        let d = self.fd_step * scale;
        let mut out = Vec::with_capacity(x.len());
        let mut xp = x.to_vec();
        for mu in 0..x.len() {
            xp[mu] = x[mu] + d;
            let gp = self.ray_transport(&xp)?;
            xp[mu] = x[mu] - d;
            let gm = self.ray_transport(&xp)?;
            xp[mu] = x[mu];
            let dg = (gp.matrix() - gm.matrix()) / num_complex::Complex64::new(2.0 * d, 0.0);
            let m = ginv.matrix() * a[mu].matrix() * g.matrix() + ginv.matrix() * dg;
            out.push(crate::liealg::project_algebra(&m)?);
        }
        Ok(out)
    }
}

/// `A' = g⁻¹Ag + g⁻¹dg` with `g(x)` the transport along the ray 0 → x.
pub fn to_radial_gauge(a: &ConnectionField, transport_steps: usize) -> Result<ConnectionField> {
    if transport_steps == 0 {
        return Err(LabError::config("transport_steps", "must be at least 1"));
    }
    Ok(ConnectionField {
        dim: a.dim,
        n: a.n,
        family: Family::RadialGauge,
        repr: Repr::Gauged(Box::new(RadialGauged {
            original: a.clone(),
            steps: transport_steps,
            fd_step: 1e-5,
        })),
    })
}

/// Transform parameters of a radial-gauge field, `None` for other fields.
pub fn radial_gauge_source(a: &ConnectionField) -> Option<&ConnectionField> {
    match &a.repr {
        Repr::Gauged(g) => Some(&g.original),
        Repr::Terms(_) => None,
    }
}

/// Curvature by central differences of `A` plus the exact commutator.
pub fn curvature_fd(a: &ConnectionField, x: &[f64], fd_step: f64) -> Result<CurvatureTensor> {
    if !(fd_step > 0.0) {
        return Err(LabError::OutOfRange {
            name: "fd_step",
            value: fd_step,
            range: "(0, inf)".into(),
        });
    }
    let d = a.dim;
    let a0 = a.eval(x)?;
    let mut da = Vec::with_capacity(d);
    let mut xp = x.to_vec();
    for nu in 0..d {
        xp[nu] = x[nu] + fd_step;
        let ap = a.eval(&xp)?;
        xp[nu] = x[nu] - fd_step;
        let am = a.eval(&xp)?;
        xp[nu] = x[nu];
        da.push(
            ap.iter()
                .zip(&am)
                .map(|(p, m)| (p - m).scale(0.5 / fd_step))
                .collect::<Vec<_>>(),
        );
    }
    Ok(CurvatureTensor::from_upper(d, a.n, |mu, nu| {
        let mut f = &da[mu][nu] - &da[nu][mu];
        f += &a0[mu].commutator(&a0[nu]);
        f
    }))
}

/// Analytic curvature when the field provides it, else finite differences.
pub fn curvature(a: &ConnectionField, x: &[f64], fd_step: Option<f64>) -> Result<CurvatureTensor> {
    if a.has_analytic_curvature() {
        return a.analytic_curvature(x);
    }
    match fd_step {
        Some(h) => curvature_fd(a, x, h),
        None => Err(LabError::config("fd_step", "required without analytic curvature")),
    }
}

/// `∫_box Σ_{μ,ρ} (-Tr)(F_{μρ} F_{μρ}) dx` by tensor Gauss-Legendre quadrature.
pub fn ym_action(a: &ConnectionField, lo: &[f64], hi: &[f64], order: usize) -> Result<f64> {
    if lo.len() != a.dim || hi.len() != a.dim {
        return Err(LabError::DimensionMismatch {
            expected: a.dim,
            got: lo.len().min(hi.len()),
        });
    }
    let rules: Vec<Vec<(f64, f64)>> = lo
        .iter()
        .zip(hi)
        .map(|(&l, &h)| gauss_legendre_on(order, l, h))
        .collect();
    let d = a.dim;
    let total = order.pow(d as u32);
    let mut acc = 0.0;
    let mut x = vec![0.0; d];
    for idx in 0..total {
        let mut r = idx;
        let mut w = 1.0;
        for k in 0..d {
            let (xk, wk) = rules[k][r % order];
            r /= order;
            x[k] = xk;
            w *= wk;
        }
        acc += w * curvature(a, &x, Some(1e-5))?.density();
    }
    Ok(acc)
}

/// Local residual `R^ν = Σ_μ (∂_μ F_{μν} + [A_μ, F_{μν}])`.
pub fn eom_residual(a: &ConnectionField, x: &[f64], fd_step: f64) -> Result<Vec<AlgebraElement>> {
    let d = a.dim;
    let a0 = a.eval(x)?;
    let f0 = curvature(a, x, Some(fd_step))?;
    let mut r = vec![AlgebraElement::zero(a.n); d];
    let mut xp = x.to_vec();
    for mu in 0..d {
        xp[mu] = x[mu] + fd_step;
        let fp = curvature(a, &xp, Some(fd_step))?;
        xp[mu] = x[mu] - fd_step;
        let fm = curvature(a, &xp, Some(fd_step))?;
        xp[mu] = x[mu];
        for (nu, rn) in r.iter_mut().enumerate() {
            if nu == mu {
                continue;
            }
            rn.axpy(0.5 / fd_step, &(fp.get(mu, nu) - fm.get(mu, nu)));
            *rn += &a0[mu].commutator(f0.get(mu, nu));
        }
    }
    Ok(r)
}

/// Finite-difference controls for endpoint functional derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct EndpointFd {
    pub h: f64,
    pub width: f64,
    pub levels: usize,
    pub steps: usize,
}

impl Default for EndpointFd {
    fn default() -> Self {
        EndpointFd {
            h: 1e-4,
            width: 0.1,
            levels: 3,
            steps: 256,
        }
    }
}

/// `ℱ_μ(γ) = P(γ)⁻¹ F_{μν}(γ(1)) γ̇^ν(1) P(γ)`.
fn endpoint_form(a: &ConnectionField, path: &dyn Curve, steps: usize) -> Result<Vec<AlgebraElement>> {
    let p = transport(a, path, steps)?;
    let f = curvature(a, &path.position(1.0), Some(1e-5))?;
    Ok(f
        .contract(&path.tangent(1.0))
        .iter()
        .map(|x| p.inverse_adjoint_action(x))
        .collect())
}

/// `Σ_μ δℱ^μ(γ')/δγ'^μ(1)` by endpoint-ramp central differences, with the
/// ramp width extrapolated to zero.
pub fn eom_residual_loop(a: &ConnectionField, path: &OpenPath, fd: &EndpointFd) -> Result<AlgebraElement> {
    let d = a.dim;
    let mut levels = Vec::with_capacity(fd.levels.max(1));
    for j in 0..fd.levels.max(1) {
        let w = fd.width / 2f64.powi(j as i32);
        let mut acc = AlgebraElement::zero(a.n);
        for mu in 0..d {
            let plus = path.with_end_ramp(EndRamp {
                width: w,
                direction: mu,
                amplitude: fd.h,
            })?;
            let minus = path.with_end_ramp(EndRamp {
                width: w,
                direction: mu,
                amplitude: -fd.h,
            })?;
            let fp = endpoint_form(a, &plus, fd.steps)?;
            let fm = endpoint_form(a, &minus, fd.steps)?;
            acc.axpy(0.5 / fd.h, &(&fp[mu] - &fm[mu]));
        }
        levels.push(acc);
    }
    Ok(richardson(&levels, &ALL_ORDERS))
}

/// `P(γ')⁻¹ (Σ_ν R^ν γ̇'^ν(1)) P(γ')`, the transported local residual the
/// loop form should reproduce.
pub fn transported_local_residual(
    a: &ConnectionField,
    path: &OpenPath,
    fd_step: f64,
    steps: usize,
) -> Result<AlgebraElement> {
    let p = transport(a, path, steps)?;
    let r = eom_residual(a, &path.position(1.0), fd_step)?;
    let v = path.tangent(1.0);
    let mut acc = AlgebraElement::zero(a.n);
    for (rn, vn) in r.iter().zip(&v) {
        acc.axpy(*vn, rn);
    }
    Ok(p.inverse_adjoint_action(&acc))
}

/// Max over `points` of `|x·A(x)|`.
pub fn radial_condition_residual(a: &ConnectionField, points: &[Vec<f64>]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in points {
        let ax = a.eval(x)?;
        let mut acc = AlgebraElement::zero(a.n);
        for (ai, xi) in ax.iter().zip(x) {
            acc.axpy(*xi, ai);
        }
        worst = worst.max(acc.norm());
    }
    Ok(worst)
}

/// Transport along the ray to `x` (the radial-gauge transform at `x`).
pub fn ray_transport(a: &ConnectionField, x: &[f64], steps: usize) -> Result<GroupElement> {
    transport_interval(a, &OpenPath::ray(x), 0.0, 1.0, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::substream;
    use rand::Rng;

    fn random_point(rng: &mut impl Rng, d: usize, r: f64) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-r..r)).collect()
    }

    fn abelian(c: f64) -> ConnectionField {
        let t = orthonormal_basis(2)[2].clone();
        ConnectionField::abelian_constant_f(&[vec![0.0, c], vec![-c, 0.0]], t).unwrap()
    }

    #[test]
    fn zero_field_has_zero_curvature_and_residual() {
        let a = ConnectionField::zero(3, 2).unwrap();
        let x = [0.1, 0.2, -0.3];
        assert_eq!(curvature(&a, &x, None).unwrap().max_norm(), 0.0);
        assert!(eom_residual(&a, &x, 1e-4).unwrap().iter().all(|r| r.norm() == 0.0));
        assert_eq!(ym_action(&a, &[0.0; 3], &[1.0; 3], 3).unwrap(), 0.0);
    }

    #[test]
    fn abelian_constant_curvature_is_exact() {
        let c = 1.7;
        let a = abelian(c);
        let t = orthonormal_basis(2)[2].clone();
        let f = curvature(&a, &[0.3, -0.8], None).unwrap();
        assert!((f.get(0, 1) - &t.scale(c)).norm() < 1e-15);
        assert!((f.get(1, 0) + &t.scale(c)).norm() < 1e-15);
        let fd = curvature_fd(&a, &[0.3, -0.8], 1e-3).unwrap();
        assert!((fd.get(0, 1) - f.get(0, 1)).norm() < 1e-12);
        assert!(eom_residual(&a, &[0.3, 0.1], 1e-4).unwrap().iter().all(|r| r.norm() < 1e-12));
        // Σ_{μρ} (-Tr)(F F) = 2 c² (-Tr T²) over the unit square.
        let s = ym_action(&a, &[0.0, 0.0], &[1.0, 1.0], 4).unwrap();
        assert!((s - 2.0 * c * c * t.norm_sq()).abs() < 1e-12);
    }

    #[test]
    fn fd_curvature_converges_at_second_order() {
        let a = ConnectionField::polynomial_random(3, 2, 3, 0.7, 9).unwrap();
        let x = [0.4, -0.3, 0.5];
        let exact = a.analytic_curvature(&x).unwrap();
        let err = |h: f64| {
            let fd = curvature_fd(&a, &x, h).unwrap();
            let mut e: f64 = 0.0;
            for mu in 0..3 {
                for nu in 0..3 {
                    e = e.max((fd.get(mu, nu) - exact.get(mu, nu)).norm());
                }
            }
            e
        };
        let (e1, e2) = (err(0.02), err(0.01));
        assert!(e1 > 1e-10);
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn polynomial_action_exact_under_order_doubling() {
        let a = ConnectionField::polynomial_random(2, 2, 2, 0.5, 4).unwrap();
        let s1 = ym_action(&a, &[-0.5, 0.0], &[0.5, 1.0], 6).unwrap();
        let s2 = ym_action(&a, &[-0.5, 0.0], &[0.5, 1.0], 12).unwrap();
        assert!((s1 - s2).abs() < 1e-10 * s1.max(1.0));
    }

    #[test]
    fn radial_family_is_in_radial_gauge() {
        let mut rng = substream(1, 0);
        for env in [None, Some(1.5)] {
            let a = ConnectionField::radial_polynomial(3, 2, 3, 0.8, env, 2).unwrap();
            let pts: Vec<_> = (0..20).map(|_| random_point(&mut rng, 3, 1.0)).collect();
            assert!(radial_condition_residual(&a, &pts).unwrap() < 1e-14);
            let fd = curvature_fd(&a, &pts[0], 1e-4).unwrap();
            let an = a.analytic_curvature(&pts[0]).unwrap();
            for mu in 0..3 {
                for nu in 0..3 {
                    assert!((fd.get(mu, nu) - an.get(mu, nu)).norm() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn radial_gauge_transform_properties() {
        let a = ConnectionField::polynomial_random(2, 2, 2, 0.6, 17).unwrap();
        let g = to_radial_gauge(&a, 1000).unwrap();
        let mut rng = substream(2, 0);
        let pts: Vec<_> = (0..5).map(|_| random_point(&mut rng, 2, 0.8)).collect();
        assert!(radial_condition_residual(&g, &pts).unwrap() < 1e-6);
        assert!(g.eval(&[0.0, 0.0]).unwrap().iter().all(|c| c.norm() < 1e-8));
        for x in &pts {
            let f = curvature(&a, x, None).unwrap().density();
            let fp = curvature_fd(&g, x, 2e-4).unwrap().density();
            assert!((f - fp).abs() < 1e-6 * f.max(1.0), "{f} vs {fp}");
        }
        // A field already in radial gauge is a fixed point.
        let ab = abelian(0.9);
        let abg = to_radial_gauge(&ab, 1000).unwrap();
        for x in &pts {
            let (u, v) = (ab.eval(x).unwrap(), abg.eval(x).unwrap());
            for (p, q) in u.iter().zip(&v) {
                assert!((p - q).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn maxwell_polynomial_solves_equations_but_random_does_not() {
        let t = orthonormal_basis(2)[0].clone();
        let a = ConnectionField::maxwell_polynomial(3, 1.3, t).unwrap();
        let x = [0.3, -0.4, 0.7];
        assert!(curvature(&a, &x, None).unwrap().max_norm() > 0.1);
        assert!(eom_residual(&a, &x, 1e-3).unwrap().iter().all(|r| r.norm() < 1e-9));
        let b = ConnectionField::polynomial_random(3, 2, 2, 0.8, 3).unwrap();
        let r = eom_residual(&b, &x, 1e-3).unwrap();
        assert!(r.iter().map(AlgebraElement::norm).fold(0.0, f64::max) > 1e-2);
    }

    #[test]
    fn eom_residual_is_gauge_covariant() {
        let a = ConnectionField::polynomial_random(2, 2, 2, 0.5, 23).unwrap();
        let g = to_radial_gauge(&a, 400).unwrap();
        let x = [0.5, -0.2];
        let r = eom_residual(&a, &x, 1e-3).unwrap();
        let rg = eom_residual(&g, &x, 1e-3).unwrap();
        let h = ray_transport(&a, &x, 400).unwrap();
        for (p, q) in r.iter().zip(&rg) {
            assert!((&h.inverse_adjoint_action(p) - q).norm() < 1e-5);
        }
    }

    #[test]
    fn loop_form_residual_matches_local_form() {
        let a = ConnectionField::polynomial_random(2, 2, 2, 0.6, 31).unwrap();
        let path = OpenPath::straight(&[0.1, -0.2], &[0.6, 0.3]).unwrap();
        let fd = EndpointFd::default();
        let lf = eom_residual_loop(&a, &path, &fd).unwrap();
        let loc = transported_local_residual(&a, &path, 1e-4, fd.steps).unwrap();
        let rel = (&lf - &loc).norm() / loc.norm();
        assert!(rel < 1e-3, "rel {rel}");
        let z = ConnectionField::zero(2, 2).unwrap();
        assert_eq!(eom_residual_loop(&z, &path, &fd).unwrap().norm(), 0.0);
    }
}
