//! Residual checks on loop-space 1-forms (transversality, nonanticipation,
//! the zero-curvature constraint) and the Monte Carlo action identity.

use rayon::prelude::*;

use crate::connection::{curvature, ConnectionField};
use crate::holonomy::{mg_transport_grid, FdParams, FnForm, LoopForm};
use crate::liealg::{orthonormal_basis, AlgebraElement};
use crate::loopgeom::{functional_derivative_extrapolated, sample_loop, Curve, LoopMeasure, LoopPath};
use crate::stats::{jackknife, substream};
use crate::{LabError, Result};

/// `𝒢^{μ,s;ν,t}` for one pair of indices.
#[derive(Clone, Debug)]
pub struct ConstraintResidual {
    pub loop_path: LoopPath,
    pub first: (usize, f64),
    pub second: (usize, f64),
    pub value: AlgebraElement,
}

impl ConstraintResidual {
    pub fn norm(&self) -> f64 {
        self.value.norm()
    }
}

/// `δB_ν(t)/δγ^μ(s) - δB_μ(s)/δγ^ν(t) + [B_μ(s), B_ν(t)]`.
pub fn constraint_residual(
    form: &dyn LoopForm,
    gamma: &LoopPath,
    s: f64,
    t: f64,
    mu: usize,
    nu: usize,
    fd: &FdParams,
) -> Result<ConstraintResidual> {
    let separation = (s - t).abs();
    if separation <= 2.0 * fd.w {
        return Err(LabError::ParameterCollision {
            separation,
            required: 2.0 * fd.w,
        });
    }
    let d = form.dim();
    if mu >= d || nu >= d {
        return Err(LabError::OutOfRange {
            name: "mu/nu",
            value: mu.max(nu) as f64,
            range: format!("0..{d}"),
        });
    }
    let component = |idx: usize, at: f64| move |g: &LoopPath| -> Result<AlgebraElement> { Ok(form.eval(g, at)?.swap_remove(idx)) };
    let d_nu_t = functional_derivative_extrapolated(component(nu, t), gamma, s, mu, fd.h, fd.w, fd.levels)?;
    let d_mu_s = functional_derivative_extrapolated(component(mu, s), gamma, t, nu, fd.h, fd.w, fd.levels)?;
    let b_s = form.eval(gamma, s)?.swap_remove(mu);
    let b_t = form.eval(gamma, t)?.swap_remove(nu);
    let mut value = &d_nu_t - &d_mu_s;
    value += &b_s.commutator(&b_t);
    Ok(ConstraintResidual {
        loop_path: gamma.clone(),
        first: (mu, s),
        second: (nu, t),
        value,
    })
}

/// Largest constraint residual over all index pairs at `(s, t)`.
pub fn max_constraint_residual(form: &dyn LoopForm, gamma: &LoopPath, s: f64, t: f64, fd: &FdParams) -> Result<f64> {
    let d = form.dim();
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|m| (0..d).map(move |n| (m, n))).collect();
    let vals = pairs
        .par_iter()
        .map(|&(m, n)| constraint_residual(form, gamma, s, t, m, n, fd).map(|r| r.norm()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}

/// `max_s ‖Σ_μ B_{μ,s} γ̇^μ(s)‖` over the grid.
pub fn transversality_residual(form: &dyn LoopForm, gamma: &dyn Curve, s_grid: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &s in s_grid {
        let b = form.eval(gamma, s)?;
        let v = gamma.velocity(s)?;
        let mut acc = AlgebraElement::zero(form.n());
        for (bm, vm) in b.iter().zip(&v) {
            acc.axpy(*vm, bm);
        }
        worst = worst.max(acc.norm());
    }
    Ok(worst)
}

/// `max_μ ‖B_{μ,s}(γ₁) - B_{μ,s}(γ₂)‖` at one parameter.
pub fn form_difference(form: &dyn LoopForm, g1: &dyn Curve, g2: &dyn Curve, s: f64) -> Result<f64> {
    let (b1, b2) = (form.eval(g1, s)?, form.eval(g2, s)?);
    Ok(b1.iter().zip(&b2).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max))
}

/// Max over grid points `s < s0` of the form difference between two loops that
/// coincide on `[0, s0]`.
pub fn nonanticipation_residual(
    form: &dyn LoopForm,
    g1: &LoopPath,
    g2: &LoopPath,
    s0: f64,
    s_grid: &[f64],
) -> Result<f64> {
    const PROBES: usize = 256;
    for k in 0..=PROBES {
        let s = s0 * k as f64 / PROBES as f64;
        if g1.position(s) != g2.position(s) || g1.tangent(s) != g2.tangent(s) {
            return Err(LabError::LoopsDisagree {
                s0,
                detail: format!("first difference at s = {s}"),
            });
        }
    }
    let mut worst: f64 = 0.0;
    for &s in s_grid.iter().filter(|&&s| s > 0.0 && s < s0) {
        worst = worst.max(form_difference(form, g1, g2, s)?);
    }
    Ok(worst)
}

/// Local, non-transported form `B_μ = Σ_ν F̂_{μν}(γ(s)) γ̇^ν(s)` on R² with a
/// nonabelian `F̂_{12}(x) = X₁ + sin(x¹) X₂`. Transverse and nonanticipating,
/// but no connection produces it, so the constraint fails.
pub fn negative_control_form() -> impl LoopForm {
    let basis = orthonormal_basis(2);
    FnForm {
        dim: 2,
        n: 2,
        transverse: true,
        nonanticipating: true,
        provider: move |g: &dyn Curve, s: f64| {
            let x = g.position(s);
            let v = g.velocity(s)?;
            let mut f = basis[0].clone();
            f.axpy(x[0].sin(), &basis[1]);
            Ok(vec![f.scale(v[1]), f.scale(-v[0])])
        },
    }
}

/// How loops are drawn for the action identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VelocitySampling {
    /// Plain Gaussian loops: γ̇(s) is correlated with γ(s).
    Plain,
    /// At each s the loop is shifted by modes 1 and 2 so that γ(s) is kept and
    /// γ̇(s) loses its regression on γ(s); the pair then factorizes.
    Decorrelated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionOptions {
    /// Factor in front of the loop side; `None` means the spacetime dimension.
    pub dimension_factor: Option<f64>,
    pub steps: usize,
    pub sampling: VelocitySampling,
    pub jackknife_groups: usize,
}

impl Default for ActionOptions {
    fn default() -> Self {
        ActionOptions {
            dimension_factor: None,
            steps: 32,
            sampling: VelocitySampling::Decorrelated,
            jackknife_groups: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionEstimate {
    pub s: f64,
    pub lhs_mean: f64,
    pub lhs_stderr: f64,
    pub rhs_mean: f64,
    pub rhs_stderr: f64,
    /// Stderr of the per-sample difference (accounts for the pairing).
    pub paired_stderr: f64,
    pub n_samples: usize,
    pub rejected: usize,
    pub measure: LoopMeasure,
}

impl ActionEstimate {
    pub fn diff(&self) -> f64 {
        self.lhs_mean - self.rhs_mean
    }

    /// `sqrt(lhs_stderr² + rhs_stderr²)`.
    pub fn combined_stderr(&self) -> f64 {
        self.lhs_stderr.hypot(self.rhs_stderr)
    }

    /// `|lhs - rhs|` in units of the combined stderr (0 when both vanish).
    pub fn z(&self) -> f64 {
        let d = self.diff().abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.combined_stderr()
        }
    }
}

/// Coefficient of γ(s) - base in the regression of γ̇(s), per coordinate.
fn velocity_regression(m: &LoopMeasure, s: f64) -> f64 {
    let c = m.point_velocity_covariance(s);
    if c[0][0] == 0.0 {
        0.0
    } else {
        c[0][1] / c[0][0]
    }
}

/// Mode-1/2 coefficients of ψ with ψ(s) = 0, ψ'(s) = 1.
fn shift_profile(s: f64) -> (f64, f64) {
    let (s1, c1) = (std::f64::consts::PI * s).sin_cos();
    let pi = std::f64::consts::PI;
    (c1 / (pi * s1 * s1), -1.0 / (2.0 * pi * s1 * s1))
}

/// Loop with γ(s) kept and γ̇(s) replaced by γ̇(s) - a (γ(s) - base).
pub fn decorrelate_at(m: &LoopMeasure, gamma: &LoopPath, s: f64) -> Result<LoopPath> {
    if m.cutoff < 2 {
        return Err(LabError::config("cutoff", "decorrelated sampling needs at least two modes"));
    }
    let a = velocity_regression(m, s);
    let (alpha, beta) = shift_profile(s);
    let x = gamma.position(s);
    let mut modes = gamma.modes().to_vec();
    for (mu, row) in modes.iter_mut().enumerate() {
        let shift = a * (x[mu] - gamma.base()[mu]);
        row[0] -= shift * alpha;
        row[1] -= shift * beta;
    }
    LoopPath::new(gamma.base().to_vec(), modes)
}

fn per_sample(
    a: &ConnectionField,
    m: &LoopMeasure,
    s_grid: &[f64],
    seed: u64,
    index: usize,
    opts: &ActionOptions,
    factor: f64,
) -> Result<Vec<Option<(f64, f64)>>> {
    let mut rng = substream(seed, index as u64);
    let base_loop = sample_loop(m, &mut rng);
    let loops: Vec<LoopPath> = match opts.sampling {
        VelocitySampling::Plain => vec![base_loop],
        VelocitySampling::Decorrelated => s_grid
            .iter()
            .map(|&s| decorrelate_at(m, &base_loop, s))
            .collect::<Result<_>>()?,
    };
    let mut out = Vec::with_capacity(s_grid.len());
    for (j, &s) in s_grid.iter().enumerate() {
        let gamma = &loops[j.min(loops.len() - 1)];
        let v = gamma.velocity(s)?;
        let v2: f64 = v.iter().map(|c| c * c).sum();
        if v2.sqrt() < 1e-10 {
            out.push(None);
            continue;
        }
        let b = mg_transport_grid(a, gamma, &[s], opts.steps)?.swap_remove(0);
        let lhs = factor * b.iter().map(AlgebraElement::norm_sq).sum::<f64>() / v2;
        let rhs = curvature(a, &gamma.position(s), Some(1e-5))?.density();
        out.push(Some((lhs, rhs)));
    }
    Ok(out)
}

/// MC estimate of `E[D Σ_μ (-Tr)(B_{μ,s}B_{μ,s}) / |γ̇(s)|²]` against
/// `E[Σ_{μρ} (-Tr)(F_{μρ}F_{μρ})(γ(s))]` at each grid point.
pub fn action_identity_grid(
    a: &ConnectionField,
    m: &LoopMeasure,
    s_grid: &[f64],
    n_samples: usize,
    seed: u64,
    opts: &ActionOptions,
) -> Result<Vec<ActionEstimate>> {
    if m.dim != a.dim() {
        return Err(LabError::DimensionMismatch {
            expected: a.dim(),
            got: m.dim,
        });
    }
    for &s in s_grid {
        if !(s > 0.0 && s < 1.0) {
            return Err(LabError::OutOfRange {
                name: "s",
                value: s,
                range: "(0, 1)".into(),
            });
        }
    }
    let factor = opts.dimension_factor.unwrap_or(a.dim() as f64);
    let rows = (0..n_samples)
        .into_par_iter()
        .map(|i| per_sample(a, m, s_grid, seed, i, opts, factor))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(s_grid.len());
    for (j, &s) in s_grid.iter().enumerate() {
        let kept: Vec<(f64, f64)> = rows.iter().filter_map(|r| r[j]).collect();
        let rejected = n_samples - kept.len();
        let lhs: Vec<f64> = kept.iter().map(|p| p.0).collect();
        let rhs: Vec<f64> = kept.iter().map(|p| p.1).collect();
        let diff: Vec<f64> = kept.iter().map(|p| p.0 - p.1).collect();
        let g = opts.jackknife_groups;
        let (lm, ls) = jackknife(&[lhs], g, |c| c[0]);
        let (rm, rs) = jackknife(&[rhs], g, |c| c[0]);
        let (_, ps) = jackknife(&[diff], g, |c| c[0]);
        out.push(ActionEstimate {
            s,
            lhs_mean: lm,
            lhs_stderr: ls,
            rhs_mean: rm,
            rhs_stderr: rs,
            paired_stderr: ps,
            n_samples: kept.len(),
            rejected,
            measure: m.clone(),
        });
    }
    Ok(out)
}

/// Single-parameter form of [`action_identity_grid`].
pub fn action_identity_mc(
    a: &ConnectionField,
    m: &LoopMeasure,
    s: f64,
    n_samples: usize,
    seed: u64,
    opts: &ActionOptions,
) -> Result<ActionEstimate> {
    Ok(action_identity_grid(a, m, &[s], n_samples, seed, opts)?.swap_remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::holonomy::TransportedCurvature;
    use crate::loopgeom::bump_deform;
    use rand::Rng;

    fn test_loop() -> LoopPath {
        LoopPath::new(vec![0.1, -0.2], vec![vec![0.5, 0.2, -0.1], vec![-0.3, 0.4, 0.05]]).unwrap()
    }

    #[test]
    fn constraint_vanishes_for_connection_forms() {
        let a = ConnectionField::polynomial_random(2, 2, 2, 0.6, 19).unwrap();
        let form = TransportedCurvature { field: &a, steps: 512 };
        let fd = FdParams::default();
        let g = test_loop();
        let r = max_constraint_residual(&form, &g, 0.3, 0.72, &fd).unwrap();
        assert!(r < 1e-3, "residual {r}");
        let swapped = constraint_residual(&form, &g, 0.72, 0.3, 1, 0, &fd).unwrap();
        let direct = constraint_residual(&form, &g, 0.3, 0.72, 0, 1, &fd).unwrap();
        assert!((&swapped.value + &direct.value).norm() < 1e-3);
        let z = ConnectionField::zero(2, 2).unwrap();
        let zf = TransportedCurvature { field: &z, steps: 64 };
        assert_eq!(max_constraint_residual(&zf, &g, 0.3, 0.72, &fd).unwrap(), 0.0);
    }

    #[test]
    fn negative_control_violates_constraint() {
        let form = negative_control_form();
        let r = max_constraint_residual(&form, &test_loop(), 0.3, 0.72, &FdParams::default()).unwrap();
        assert!(r > 1e-2, "residual {r}");
    }

    #[test]
    fn overlapping_supports_rejected() {
        let form = negative_control_form();
        let e = constraint_residual(&form, &test_loop(), 0.4, 0.45, 0, 1, &FdParams::default());
        assert!(matches!(e, Err(LabError::ParameterCollision { .. })));
    }

    #[test]
    fn transversality_of_forms() {
        let a = ConnectionField::polynomial_random(2, 3, 2, 0.6, 2).unwrap();
        let g = test_loop();
        let grid: Vec<f64> = (1..20).map(|k| k as f64 / 20.0).collect();
        let form = TransportedCurvature { field: &a, steps: 64 };
        assert!(transversality_residual(&form, &g, &grid).unwrap() < 1e-12);
        let x = orthonormal_basis(2)[1].scale(0.7);
        let bad = FnForm {
            dim: 2,
            n: 2,
            transverse: false,
            nonanticipating: true,
            provider: |c: &dyn Curve, s: f64| Ok(c.velocity(s)?.iter().map(|v| x.scale(*v)).collect()),
        };
        let want = grid
            .iter()
            .map(|&s| g.tangent(s).iter().map(|v| v * v).sum::<f64>() * x.norm())
            .fold(0.0, f64::max);
        assert!((transversality_residual(&bad, &g, &grid).unwrap() - want).abs() < 1e-12);
        let zero = FnForm {
            dim: 2,
            n: 2,
            transverse: true,
            nonanticipating: true,
            provider: |_: &dyn Curve, _: f64| Ok(vec![AlgebraElement::zero(2); 2]),
        };
        assert_eq!(transversality_residual(&zero, &g, &grid).unwrap(), 0.0);
    }

    #[test]
    fn nonanticipation_and_its_sharpness() {
        let a = ConnectionField::polynomial_random(2, 2, 2, 0.8, 6).unwrap();
        let form = TransportedCurvature { field: &a, steps: 256 };
        let g1 = test_loop();
        let s0 = 0.5;
        let g2 = bump_deform(&g1, 0.6, 0, 0.2, 0.1).unwrap();
        let grid: Vec<f64> = (1..10).map(|k| k as f64 * 0.05).collect();
        assert_eq!(nonanticipation_residual(&form, &g1, &g1, s0, &grid).unwrap(), 0.0);
        assert!(nonanticipation_residual(&form, &g1, &g2, s0, &grid).unwrap() < 1e-8);
        assert!(form_difference(&form, &g1, &g2, 0.58).unwrap() > 1e-3);
        let g3 = bump_deform(&g1, 0.4, 0, 0.2, 0.1).unwrap();
        assert!(matches!(
            nonanticipation_residual(&form, &g1, &g3, s0, &grid),
            Err(LabError::LoopsDisagree { .. })
        ));
    }

    #[test]
    fn decorrelation_keeps_point_and_removes_regression() {
        let m = LoopMeasure::new(1.0, 8, vec![0.0, 0.0]).unwrap();
        let s = 0.27;
        let n = 20_000;
        let mut acc = 0.0;
        let mut vv = 0.0;
        let mut xx = 0.0;
        for i in 0..n {
            let g = sample_loop(&m, &mut substream(4, i));
            let d = decorrelate_at(&m, &g, s).unwrap();
            let (x, xd) = (g.position(s), d.position(s));
            assert!((x[0] - xd[0]).abs() < 1e-14);
            let v = d.tangent(s)[0];
            acc += x[0] * v;
            vv += v * v;
            xx += x[0] * x[0];
        }
        let corr = acc / (vv * xx).sqrt();
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr {corr}");
        assert!(substream(4, 0).random::<f64>() >= 0.0);
    }

    #[test]
    fn action_identity_small_runs() {
        let m2 = LoopMeasure::new(1.0, 12, vec![0.0, 0.0]).unwrap();
        let opts = ActionOptions::default();
        let z = ConnectionField::zero(2, 2).unwrap();
        let e = action_identity_mc(&z, &m2, 0.4, 200, 1, &opts).unwrap();
        assert_eq!((e.lhs_mean, e.rhs_mean, e.z()), (0.0, 0.0, 0.0));
        let t = orthonormal_basis(2)[2].clone();
        let t_sq = t.norm_sq();
        let ab = ConnectionField::abelian_constant_f(&[vec![0.0, 1.1], vec![-1.1, 0.0]], t).unwrap();
        let e = action_identity_mc(&ab, &m2, 0.3, 2000, 2, &opts).unwrap();
        assert!(e.z() <= 3.0);
        assert!((e.rhs_mean - 2.0 * 1.1 * 1.1 * t_sq).abs() < 1e-12);
        let m3 = LoopMeasure::new(1.0, 12, vec![0.0; 3]).unwrap();
        let p = ConnectionField::polynomial_random(3, 2, 1, 0.8, 5).unwrap();
        let right = action_identity_mc(&p, &m3, 0.5, 4000, 3, &opts).unwrap();
        let wrong = action_identity_mc(
            &p,
            &m3,
            0.5,
            4000,
            3,
            &ActionOptions {
                dimension_factor: Some(2.0),
                ..opts.clone()
            },
        )
        .unwrap();
        assert!(right.z() <= 3.0, "z {}", right.z());
        assert!(wrong.z() > 5.0, "z {}", wrong.z());
        assert_eq!(right.rejected, 0);
    }
}
