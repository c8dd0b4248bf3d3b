//! Based loops and open paths in R^D: evaluation, bump deformations, Gaussian
//! loop sampling and bump-smeared functional derivatives.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::extrap::{richardson, LinearCombination, EVEN_ORDERS};
use crate::{LabError, Result};

/// ∫_{-1}^{1} exp(-1/(1-u²)) du.
pub const BUMP_MASS: f64 = 0.443_993_816_168_079_4;

/// Unnormalized bump profile on (-1, 1).
fn bump_profile(u: f64) -> f64 {
    let q = 1.0 - u * u;
    if q <= 0.0 {
        0.0
    } else {
        (-1.0 / q).exp()
    }
}

fn bump_profile_deriv(u: f64) -> f64 {
    let q = 1.0 - u * u;
    if q <= 0.0 {
        0.0
    } else {
        (-1.0 / q).exp() * (-2.0 * u / (q * q))
    }
}

/// A parametrized curve on [0, 1].
///
/// `position` and `tangent` are unchecked; `eval` and `velocity` validate the
/// parameter. `breakpoints` lists interior parameters where the curve is not
/// smooth or where an integrator should place a node.
pub trait Curve: Sync {
    fn dim(&self) -> usize;
    fn position(&self, s: f64) -> Vec<f64>;
    fn tangent(&self, s: f64) -> Vec<f64>;
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
    fn kinks(&self) -> Vec<f64> {
        Vec::new()
    }

    fn eval(&self, s: f64) -> Result<Vec<f64>> {
        check_parameter(s)?;
        Ok(self.position(s))
    }

    fn velocity(&self, s: f64) -> Result<Vec<f64>> {
        check_parameter(s)?;
        if self.kinks().contains(&s) {
            return Err(LabError::Kink(s));
        }
        Ok(self.tangent(s))
    }
}

fn check_parameter(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(LabError::OutOfRange {
            name: "s",
            value: s,
            range: "[0, 1]".into(),
        });
    }
    Ok(())
}

/// Smooth unit-integral bump `amplitude * η(s) e_direction`, η supported in
/// `[center - half_width, center + half_width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bump {
    pub center: f64,
    pub half_width: f64,
    pub direction: usize,
    pub amplitude: f64,
}

impl Bump {
    pub fn density(&self, s: f64) -> f64 {
        let u = (s - self.center) / self.half_width;
        bump_profile(u) / (self.half_width * BUMP_MASS)
    }

    pub fn density_deriv(&self, s: f64) -> f64 {
        let u = (s - self.center) / self.half_width;
        bump_profile_deriv(u) / (self.half_width * self.half_width * BUMP_MASS)
    }

    fn support(&self) -> (f64, f64) {
        (self.center - self.half_width, self.center + self.half_width)
    }
}

/// Based loop: `base + Σ_k c_{μ,k} sin(πks)` plus bump deformations.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopPath {
    base: Vec<f64>,
    /// `modes[μ][k-1]` multiplies `sin(πks)`.
    modes: Vec<Vec<f64>>,
    bumps: Vec<Bump>,
}

impl LoopPath {
    pub fn new(base: Vec<f64>, modes: Vec<Vec<f64>>) -> Result<Self> {
        if modes.len() != base.len() {
            return Err(LabError::DimensionMismatch {
                expected: base.len(),
                got: modes.len(),
            });
        }
        if base.iter().chain(modes.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(LabError::NumericInput("non-finite loop coefficient".into()));
        }
        let k = modes.iter().map(Vec::len).max().unwrap_or(0);
        let modes = modes
            .into_iter()
            .map(|mut m| {
                m.resize(k, 0.0);
                m
            })
            .collect();
        Ok(LoopPath {
            base,
            modes,
            bumps: Vec::new(),
        })
    }

    /// Constant loop at `base`.
    pub fn constant(base: Vec<f64>) -> Self {
        let d = base.len();
        LoopPath {
            base,
            modes: vec![Vec::new(); d],
            bumps: Vec::new(),
        }
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn modes(&self) -> &[Vec<f64>] {
        &self.modes
    }

    pub fn bumps(&self) -> &[Bump] {
        &self.bumps
    }

    pub fn cutoff(&self) -> usize {
        self.modes.first().map_or(0, Vec::len)
    }

    /// Loop with an added bump; fails unless the support lies inside (0, 1).
    pub fn with_bump(&self, bump: Bump) -> Result<LoopPath> {
        check_bump(&bump, self.dim())?;
        let mut out = self.clone();
        if bump.amplitude != 0.0 {
            out.bumps.push(bump);
        }
        Ok(out)
    }

    fn smooth_part(&self, s: f64, out: &mut [f64], deriv: bool) {
        let k_max = self.cutoff();
        if k_max == 0 {
            return;
        }
        // sin/cos(πks) by the angle-addition recurrence.
        let th = std::f64::consts::PI * s;
        let (s1, c1) = th.sin_cos();
        let mut sk = s1;
        let mut ck = c1;
        for k in 1..=k_max {
            let factor = if deriv { std::f64::consts::PI * k as f64 * ck } else { sk };
            for (o, m) in out.iter_mut().zip(&self.modes) {
                *o += m[k - 1] * factor;
            }
            let sn = sk * c1 + ck * s1;
            let cn = ck * c1 - sk * s1;
            sk = sn;
            ck = cn;
        }
    }
}

fn check_bump(bump: &Bump, dim: usize) -> Result<()> {
    if bump.direction >= dim {
        return Err(LabError::OutOfRange {
            name: "mu",
            value: bump.direction as f64,
            range: format!("0..{dim}"),
        });
    }
    if !(bump.half_width > 0.0) || !bump.amplitude.is_finite() || !bump.center.is_finite() {
        return Err(LabError::NumericInput("bump width must be positive".into()));
    }
    let (lo, hi) = bump.support();
    if lo <= 0.0 || hi >= 1.0 {
        return Err(LabError::BumpSupport { lo, hi });
    }
    Ok(())
}

impl Curve for LoopPath {
    fn dim(&self) -> usize {
        self.base.len()
    }

    fn position(&self, s: f64) -> Vec<f64> {
        let mut x = self.base.clone();
        if s == 0.0 || s == 1.0 {
            return x;
        }
        self.smooth_part(s, &mut x, false);
        for b in &self.bumps {
            x[b.direction] += b.amplitude * b.density(s);
        }
        x
    }

    fn tangent(&self, s: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.smooth_part(s, &mut v, true);
        for b in &self.bumps {
            v[b.direction] += b.amplitude * b.density_deriv(s);
        }
        v
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.bumps
            .iter()
            .flat_map(|b| {
                let (lo, hi) = b.support();
                [lo, hi]
            })
            .collect()
    }
}

/// `bump_deform(γ, s0, μ, h, w)`: add `h η e_μ` with η of half-width `w` at `s0`.
pub fn bump_deform(gamma: &LoopPath, s0: f64, mu: usize, h: f64, w: f64) -> Result<LoopPath> {
    gamma.with_bump(Bump {
        center: s0,
        half_width: w,
        direction: mu,
        amplitude: h,
    })
}

/// Truncation `γ_s(t) = γ(st)` of any curve.
pub struct PathSegment<'a, C: Curve + ?Sized> {
    parent: &'a C,
    s: f64,
}

impl<'a, C: Curve + ?Sized> PathSegment<'a, C> {
    pub fn new(parent: &'a C, s: f64) -> Result<Self> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(LabError::OutOfRange {
                name: "s",
                value: s,
                range: "(0, 1]".into(),
            });
        }
        Ok(PathSegment { parent, s })
    }
}

impl<C: Curve + ?Sized> Curve for PathSegment<'_, C> {
    fn dim(&self) -> usize {
        self.parent.dim()
    }
    fn position(&self, t: f64) -> Vec<f64> {
        self.parent.position(self.s * t)
    }
    fn tangent(&self, t: f64) -> Vec<f64> {
        let mut v = self.parent.tangent(self.s * t);
        v.iter_mut().for_each(|c| *c *= self.s);
        v
    }
    fn breakpoints(&self) -> Vec<f64> {
        rescale(self.parent.breakpoints(), self.s)
    }
    fn kinks(&self) -> Vec<f64> {
        rescale(self.parent.kinks(), self.s)
    }
}

fn rescale(points: Vec<f64>, s: f64) -> Vec<f64> {
    points
        .into_iter()
        .filter(|&b| b > 0.0 && b < s)
        .map(|b| b / s)
        .collect()
}

/// The loop out along the ray to `x` and back: `σ_x(s) = 2sx`, then `2(1-s)x`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialLoop {
    pub x: Vec<f64>,
}

impl RadialLoop {
    pub fn new(x: Vec<f64>) -> Self {
        RadialLoop { x }
    }
}

impl Curve for RadialLoop {
    fn dim(&self) -> usize {
        self.x.len()
    }
    fn position(&self, s: f64) -> Vec<f64> {
        let f = if s <= 0.5 { 2.0 * s } else { 2.0 * (1.0 - s) };
        self.x.iter().map(|c| f * c).collect()
    }
    fn tangent(&self, s: f64) -> Vec<f64> {
        let f = if s < 0.5 { 2.0 } else { -2.0 };
        self.x.iter().map(|c| f * c).collect()
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![0.5]
    }
    fn kinks(&self) -> Vec<f64> {
        vec![0.5]
    }
}

/// Smooth end-of-path deformation `amplitude β(t) e_direction`, where β rises
/// from 0 to 1 on `[1 - width, 1]` with vanishing slope at both ends.
#[derive(Clone, Debug, PartialEq)]
pub struct EndRamp {
    pub width: f64,
    pub direction: usize,
    pub amplitude: f64,
}

impl EndRamp {
    fn profile(&self, t: f64) -> (f64, f64) {
        let u = (t - (1.0 - self.width)) / self.width;
        if u <= 0.0 {
            (0.0, 0.0)
        } else if u >= 1.0 {
            (1.0, 0.0)
        } else {
            let v = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
            let dv = 30.0 * u * u * (1.0 - u) * (1.0 - u) / self.width;
            (v, dv)
        }
    }
}

/// Open polynomial path `start + Σ_k coeffs[k-1] t^k`, with optional end ramps
/// for endpoint functional derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct OpenPath {
    start: Vec<f64>,
    coeffs: Vec<Vec<f64>>,
    ramps: Vec<EndRamp>,
}

impl OpenPath {
    /// `coeffs[k-1]` is the coefficient vector of `t^k`.
    pub fn new(start: Vec<f64>, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        for c in &coeffs {
            if c.len() != start.len() {
                return Err(LabError::DimensionMismatch {
                    expected: start.len(),
                    got: c.len(),
                });
            }
        }
        Ok(OpenPath {
            start,
            coeffs,
            ramps: Vec::new(),
        })
    }

    /// Straight segment from `a` to `b`.
    pub fn straight(a: &[f64], b: &[f64]) -> Result<Self> {
        let d: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
        OpenPath::new(a.to_vec(), vec![d])
    }

    /// Ray from the origin to `x`.
    pub fn ray(x: &[f64]) -> Self {
        OpenPath {
            start: vec![0.0; x.len()],
            coeffs: vec![x.to_vec()],
            ramps: Vec::new(),
        }
    }

    pub fn with_end_ramp(&self, ramp: EndRamp) -> Result<OpenPath> {
        if ramp.direction >= self.dim() {
            return Err(LabError::OutOfRange {
                name: "mu",
                value: ramp.direction as f64,
                range: format!("0..{}", self.dim()),
            });
        }
        if !(ramp.width > 0.0 && ramp.width < 1.0) {
            return Err(LabError::BumpSupport {
                lo: 1.0 - ramp.width,
                hi: 1.0,
            });
        }
        let mut out = self.clone();
        out.ramps.push(ramp);
        Ok(out)
    }
}

impl Curve for OpenPath {
    fn dim(&self) -> usize {
        self.start.len()
    }
    fn position(&self, t: f64) -> Vec<f64> {
        let mut x = self.start.clone();
        let mut p = 1.0;
        for c in &self.coeffs {
            p *= t;
            for (xi, ci) in x.iter_mut().zip(c) {
                *xi += ci * p;
            }
        }
        for r in &self.ramps {
            x[r.direction] += r.amplitude * r.profile(t).0;
        }
        x
    }
    fn tangent(&self, t: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        let mut p = 1.0;
        for (k, c) in self.coeffs.iter().enumerate() {
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi += (k + 1) as f64 * ci * p;
            }
            p *= t;
        }
        for r in &self.ramps {
            v[r.direction] += r.amplitude * r.profile(t).1;
        }
        v
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.ramps.iter().map(|r| 1.0 - r.width).collect()
    }
}

/// Gaussian loop measure with mode variances `1/(ε((πk)²+1)²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopMeasure {
    pub epsilon: f64,
    pub cutoff: usize,
    pub dim: usize,
    pub base: Vec<f64>,
}

impl LoopMeasure {
    pub fn new(epsilon: f64, cutoff: usize, base: Vec<f64>) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(LabError::OutOfRange {
                name: "epsilon",
                value: epsilon,
                range: "(0, inf)".into(),
            });
        }
        if cutoff == 0 {
            return Err(LabError::config("cutoff", "must be at least 1"));
        }
        Ok(LoopMeasure {
            epsilon,
            cutoff,
            dim: base.len(),
            base,
        })
    }

    pub fn mode_variance(&self, k: usize) -> f64 {
        let l = (std::f64::consts::PI * k as f64).powi(2) + 1.0;
        1.0 / (self.epsilon * l * l)
    }

    /// Analytic covariance of `(γ^μ(s), γ̇^μ(s))` for one coordinate.
    pub fn point_velocity_covariance(&self, s: f64) -> [[f64; 2]; 2] {
        let mut c = [[0.0; 2]; 2];
        for k in 1..=self.cutoff {
            let a = std::f64::consts::PI * k as f64;
            let (sn, cs) = (a * s).sin_cos();
            let v = self.mode_variance(k);
            c[0][0] += v * sn * sn;
            c[0][1] += v * sn * a * cs;
            c[1][1] += v * a * a * cs * cs;
        }
        c[1][0] = c[0][1];
        c
    }
}

pub fn sample_loop<R: Rng + ?Sized>(m: &LoopMeasure, rng: &mut R) -> LoopPath {
    let sd: Vec<f64> = (1..=m.cutoff).map(|k| m.mode_variance(k).sqrt()).collect();
    let modes = (0..m.dim)
        .map(|_| {
            sd.iter()
                .map(|s| s * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    LoopPath {
        base: m.base.clone(),
        modes,
        bumps: Vec::new(),
    }
}

/// Bump-smeared central difference of a loop functional.
pub fn functional_derivative<T, F>(f: F, gamma: &LoopPath, s0: f64, mu: usize, h: f64, w: f64) -> Result<T>
where
    T: LinearCombination,
    F: Fn(&LoopPath) -> Result<T>,
{
    let plus = f(&bump_deform(gamma, s0, mu, h, w)?)?;
    let minus = f(&bump_deform(gamma, s0, mu, -h, w)?)?;
    Ok(plus.combine(0.5 / h, &minus, -0.5 / h))
}

/// `functional_derivative` at widths `w, w/2, ...` (`levels` values),
/// Richardson-extrapolated to `w → 0`.
pub fn functional_derivative_extrapolated<T, F>(
    f: F,
    gamma: &LoopPath,
    s0: f64,
    mu: usize,
    h: f64,
    w: f64,
    levels: usize,
) -> Result<T>
where
    T: LinearCombination,
    F: Fn(&LoopPath) -> Result<T>,
{
    let vals = (0..levels.max(1))
        .map(|j| functional_derivative(&f, gamma, s0, mu, h, w / 2f64.powi(j as i32)))
        .collect::<Result<Vec<T>>>()?;
    Ok(richardson(&vals, &EVEN_ORDERS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use crate::stats::substream;

    fn sample_path() -> LoopPath {
        LoopPath::new(vec![0.3, -0.2], vec![vec![0.5, -0.1, 0.05], vec![0.2, 0.3]]).unwrap()
    }

    #[test]
    fn bump_mass_constant() {
        let v = integrate(bump_profile, -1.0, 1.0, 20, 64);
        assert!((v - BUMP_MASS).abs() < 1e-13);
    }

    #[test]
    fn radial_loop_values() {
        let r = RadialLoop::new(vec![1.0, -2.0]);
        assert_eq!(r.eval(0.25).unwrap(), vec![0.5, -1.0]);
        assert_eq!(r.eval(0.5).unwrap(), vec![1.0, -2.0]);
        assert_eq!(r.velocity(0.3).unwrap(), vec![2.0, -4.0]);
        assert!(matches!(r.velocity(0.5), Err(LabError::Kink(_))));
        let z = RadialLoop::new(vec![0.0; 3]);
        assert!(z.eval(0.7).unwrap().iter().all(|&c| c == 0.0));
        assert!(r.eval(1.5).is_err());
    }

    #[test]
    fn loop_endpoints_exact_and_velocity_matches_fd() {
        let g = sample_path();
        assert_eq!(g.eval(0.0).unwrap(), g.base());
        assert_eq!(g.eval(1.0).unwrap(), g.base());
        let single = LoopPath::new(vec![0.0], vec![vec![0.7]]).unwrap();
        for &s in &[0.1, 0.37, 0.8] {
            let v = single.velocity(s).unwrap()[0];
            assert!((v - std::f64::consts::PI * 0.7 * (std::f64::consts::PI * s).cos()).abs() < 1e-12);
            let h = 1e-5;
            let fd = (single.position(s + h)[0] - single.position(s - h)[0]) / (2.0 * h);
            assert!((v - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn segment_chain_rule() {
        let g = bump_deform(&sample_path(), 0.5, 1, 0.1, 0.2).unwrap();
        let seg = PathSegment::new(&g, 0.6).unwrap();
        let h = 1e-5;
        for &t in &[0.2, 0.75, 0.9] {
            let v = seg.velocity(t).unwrap();
            let parent = g.tangent(0.6 * t);
            for k in 0..2 {
                let fd = (seg.position(t + h)[k] - seg.position(t - h)[k]) / (2.0 * h);
                assert!((v[k] - fd).abs() < 1e-8);
                assert!((v[k] - 0.6 * parent[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bump_properties() {
        let g = sample_path();
        assert_eq!(bump_deform(&g, 0.4, 0, 0.0, 0.1).unwrap(), g);
        let d = bump_deform(&g, 0.4, 0, 0.3, 0.1).unwrap();
        for &s in &[0.1, 0.29, 0.51, 0.9] {
            assert_eq!(d.position(s), g.position(s));
        }
        let mass = integrate(|s| d.position(s)[0] - g.position(s)[0], 0.3, 0.5, 20, 16);
        assert!((mass - 0.3).abs() < 1e-10);
        assert!(matches!(
            bump_deform(&g, 0.05, 0, 1.0, 0.05),
            Err(LabError::BumpSupport { .. })
        ));
        let h = 1e-6;
        let s = 0.43;
        let fd = (d.position(s + h)[0] - d.position(s - h)[0]) / (2.0 * h);
        assert!((d.tangent(s)[0] - fd).abs() < 1e-6);
    }

    #[test]
    fn functional_derivative_oracles() {
        let g = sample_path();
        let point = |gm: &LoopPath| Ok(gm.position(0.8)[1]);
        assert_eq!(functional_derivative(point, &g, 0.3, 1, 1e-3, 0.1).unwrap(), 0.0);
        let linear = |gm: &LoopPath| Ok(integrate(|s| gm.position(s)[0], 0.0, 1.0, 20, 40));
        let v: f64 = functional_derivative(linear, &g, 0.5, 0, 1e-2, 0.1).unwrap();
        assert!((v - 1.0).abs() < 1e-8);
        let quad = |gm: &LoopPath| Ok(integrate(|s| gm.position(s)[0].powi(2), 0.0, 1.0, 20, 80));
        let s0 = 0.4;
        let v: f64 = functional_derivative_extrapolated(quad, &g, s0, 0, 1e-3, 0.1, 3).unwrap();
        let want = 2.0 * g.position(s0)[0];
        assert!((v - want).abs() < 1e-7, "{v} vs {want}");
    }

    #[test]
    fn sampled_mode_variances() {
        let m = LoopMeasure::new(0.5, 4, vec![0.0]).unwrap();
        let mut rng = substream(11, 0);
        let n = 100_000;
        let mut sums = [0.0f64; 4];
        let mut quart = [0.0f64; 4];
        for _ in 0..n {
            let l = sample_loop(&m, &mut rng);
            assert_eq!(l.position(1.0), vec![0.0]);
            for k in 0..4 {
                let c = l.modes()[0][k];
                sums[k] += c * c;
                quart[k] += c.powi(4);
            }
        }
        for k in 0..4 {
            let var = sums[k] / n as f64;
            let se = ((quart[k] / n as f64 - var * var) / n as f64).sqrt();
            assert!((var - m.mode_variance(k + 1)).abs() < 4.0 * se);
        }
        let m4 = LoopMeasure::new(2.0, 4, vec![0.0]).unwrap();
        for k in 1..=4 {
            assert!((m4.mode_variance(k).sqrt() * 2.0 - m.mode_variance(k).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn velocity_marginal_even_and_covariance_matches() {
        let m = LoopMeasure::new(1.0, 6, vec![0.0, 0.0]).unwrap();
        let mut rng = substream(12, 0);
        let s = 0.3;
        let n = 40_000;
        let (mut x, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let l = sample_loop(&m, &mut rng);
            x.push(l.position(s)[0]);
            v.push(l.tangent(s)[0]);
        }
        let var_v = v.iter().map(|a| a * a).sum::<f64>() / n as f64;
        let skew = v.iter().map(|a| a.powi(3)).sum::<f64>() / n as f64 / var_v.powf(1.5);
        assert!(skew.abs() < 4.0 * (6.0 / n as f64).sqrt());
        let c = m.point_velocity_covariance(s);
        let cxv = x.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        let se = (c[0][0] * c[1][1] + c[0][1] * c[0][1]).sqrt() / (n as f64).sqrt();
        assert!((cxv - c[0][1]).abs() < 4.0 * se);
        assert!((var_v - c[1][1]).abs() < 4.0 * c[1][1] * (2.0 / n as f64).sqrt());
    }
}
