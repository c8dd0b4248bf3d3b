//! Monte Carlo checks of the area, coarea, proportionality, graph-case and
//! delta-limit formulas.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::catalog::{Chart, Geometry, SamplingChart};
use super::{jh, sylvester_sides, volume_factor, MCIntegralResult, Poly, SmoothMap};
use crate::quadrature::gauss_legendre_on;
use crate::stats::{extrapolated_jackknife, jackknife, korobov_generator, next_prime, shifted_lattice, substream};
use crate::{LabError, Result};

/// Jackknife groups for every MC estimate in this module.
pub const GROUPS: usize = 32;
const ROUNDOFF: f64 = 1e-12;

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `|diff| / σ`, with σ floored at roundoff of the compared magnitudes.
fn z_score(diff: f64, sigma: f64, scale: f64) -> f64 {
    if diff == 0.0 {
        return 0.0;
    }
    diff.abs() / sigma.hypot(ROUNDOFF * scale.abs().max(1.0))
}

/// `(πε)^{-l/2} exp(-|h|²/ε)`.
pub fn gaussian_delta(h: &[f64], eps: f64) -> f64 {
    let r2: f64 = h.iter().map(|v| v * v).sum();
    (PI * eps).powf(-(h.len() as f64) / 2.0) * (-r2 / eps).exp()
}

/// Observables on stratified unit-cube samples, returned column-major.
/// Each of the [`GROUPS`] blocks is the same rank-1 lattice under its own
/// random shift, so block means are independent.
fn mc_columns<F>(dim: usize, n: usize, seed: u64, f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let per = next_prime(n.div_ceil(GROUPS).max(5));
    let generator = korobov_generator(per, dim);
    let blocks: Vec<Vec<Vec<f64>>> = (0..GROUPS)
        .into_par_iter()
        .map(|g| {
            let mut rng = substream(seed, g as u64);
            shifted_lattice(&generator, per, &mut rng)
                .iter()
                .map(|u| f(u))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let width = blocks[0][0].len();
    let mut cols = vec![Vec::with_capacity(per * GROUPS); width];
    for row in blocks.iter().flatten() {
        for (c, v) in cols.iter_mut().zip(row) {
            c.push(*v);
        }
    }
    Ok(cols)
}

fn integral(col: &[f64], domain: &str) -> MCIntegralResult {
    let (mean, stderr) = jackknife(&[col.to_vec()], GROUPS, |m| m[0]);
    MCIntegralResult {
        mean,
        stderr,
        n_samples: col.len(),
        domain: domain.to_string(),
    }
}

fn probe_units(dim: usize, count: usize) -> impl Iterator<Item = Vec<f64>> {
    (0..count).map(move |k| {
        let t = (k as f64 + 0.5) / count as f64;
        (0..dim).map(|j| (t * (j as f64 + 1.0) * 0.618_033_988_75 + 0.1 * j as f64).fract()).collect()
    })
}

/// An estimate with its stderr and deviation from the expected value in σ.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioEstimate {
    pub integrand: String,
    pub value: f64,
    pub stderr: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AreaReport {
    pub charts: [String; 2],
    pub integrand: String,
    /// `∫F(g₁(x))dx`.
    pub direct: MCIntegralResult,
    /// The same integral routed through `g₂`.
    pub routed: MCIntegralResult,
    pub hausdorff: [MCIntegralResult; 2],
    pub z_routed: f64,
    pub z_hausdorff: f64,
    pub pass: bool,
}

/// Parametrization independence of `∫F` over the surface covered by `g1` and `g2`.
pub fn area_formula_check(f: &Poly, g1: &Chart, g2: &Chart, n_samples: usize, seed: u64) -> Result<AreaReport> {
    let inv = g1
        .inverse
        .as_ref()
        .ok_or_else(|| LabError::ChartMismatch(format!("chart `{}` has no inverse", g1.name)))?;
    for u in probe_units(g2.dim(), 17) {
        let y = g2.map.eval(&g2.at(&u))?;
        let back = g1.map.eval(&inv(&y))?;
        let miss = y.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if miss > 1e-9 {
            return Err(LabError::ChartMismatch(format!(
                "`{}` and `{}` cover different sets: miss {miss:e} at {y:?}",
                g1.name, g2.name
            )));
        }
    }
    let (v1, v2) = (g1.volume(), g2.volume());
    let one = mc_columns(g1.dim(), n_samples, seed, |u| {
        let x = g1.at(u);
        let fx = f.eval(&g1.map.eval_unchecked(&x));
        Ok(vec![fx * v1, fx * volume_factor(&g1.map, &x)? * v1])
    })?;
    let two = mc_columns(g2.dim(), n_samples, seed.wrapping_add(1), |u| {
        let y = g2.at(u);
        let p = g2.map.eval_unchecked(&y);
        let j2 = volume_factor(&g2.map, &y)?;
        let j1 = volume_factor(&g1.map, &inv(&p))?;
        let fy = f.eval(&p);
        Ok(vec![fy * j2 / j1 * v2, fy * j2 * v2])
    })?;
    let d1 = format!("{} domain", g1.name);
    let d2 = format!("{} domain", g2.name);
    let direct = integral(&one[0], &d1);
    let routed = integral(&two[0], &d2);
    let h1 = integral(&one[1], &d1);
    let h2 = integral(&two[1], &d2);
    let z_routed = z_score(direct.mean - routed.mean, direct.stderr.hypot(routed.stderr), direct.mean);
    let z_hausdorff = z_score(h1.mean - h2.mean, h1.stderr.hypot(h2.stderr), h1.mean);
    Ok(AreaReport {
        charts: [g1.name.clone(), g2.name.clone()],
        integrand: f.source().to_string(),
        direct,
        routed,
        hausdorff: [h1, h2],
        z_routed,
        z_hausdorff,
        pass: z_routed <= 3.0 && z_hausdorff <= 3.0,
    })
}

/// Scalar constraint with a chart for each level set.
#[derive(Clone)]
pub struct CoareaCase {
    pub name: String,
    pub integrand_name: String,
    integrand: ScalarFn,
    pub constraint: SmoothMap,
    level_chart: Arc<dyn Fn(f64) -> Chart + Send + Sync>,
    level_range: Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>,
    sampling: Arc<dyn Fn(f64) -> SamplingChart + Send + Sync>,
    oracle: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl std::fmt::Debug for CoareaCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CoareaCase({}, K = {})", self.name, self.integrand_name)
    }
}

impl CoareaCase {
    /// `h = |z| - 1` on R², `K = 1`; level sets are circles of radius `1 + c`.
    pub fn radial() -> Self {
        let h = SmoothMap::new(2, 1, |z| vec![z[0].hypot(z[1]) - 1.0]).with_derivative(|z| {
            let r = z[0].hypot(z[1]);
            DMatrix::from_row_slice(1, 2, &[z[0] / r, z[1] / r])
        });
        CoareaCase {
            name: "radial".into(),
            integrand_name: "1".into(),
            integrand: Arc::new(|_| 1.0),
            constraint: h,
            level_chart: Arc::new(|c| {
                let rad = 1.0 + c;
                let map = SmoothMap::new(1, 2, move |x| vec![rad * x[0].cos(), rad * x[0].sin()])
                    .with_derivative(move |x| DMatrix::from_column_slice(2, 1, &[-rad * x[0].sin(), rad * x[0].cos()]));
                Chart::new("level_circle", map, vec![0.0], vec![2.0 * PI])
            }),
            level_range: Arc::new(|eps| ((-8.0 * eps.sqrt()).max(-1.0), 8.0 * eps.sqrt())),
            sampling: Arc::new(|eps| {
                let w = 8.0 * eps.sqrt();
                SamplingChart::shell(2, (1.0 - w).max(0.0), 1.0 + w)
            }),
            // 2π ∫_{-1}^∞ (1 + c) δ_ε(c) dc; the level sets end at c = -1
            oracle: Some(Arc::new(|eps: f64| {
                let mass = 0.5 * (1.0 + libm::erf(1.0 / eps.sqrt()));
                let first = 0.5 * (eps / PI).sqrt() * (-1.0 / eps).exp();
                2.0 * PI * (mass + first)
            })),
        }
    }

    /// `h = a·z` on R² with `K = exp(-|z|²)`.
    pub fn linear(a: [f64; 2]) -> Self {
        let na = a[0].hypot(a[1]);
        let unit = [a[0] / na, a[1] / na];
        let perp = [-unit[1], unit[0]];
        let h = SmoothMap::linear(DMatrix::from_row_slice(1, 2, &a));
        CoareaCase {
            name: "linear".into(),
            integrand_name: "exp(-|z|^2)".into(),
            integrand: Arc::new(|z| (-(z[0] * z[0] + z[1] * z[1])).exp()),
            constraint: h,
            level_chart: Arc::new(move |c| {
                let off = c / na;
                let map = SmoothMap::new(1, 2, move |s| vec![off * unit[0] + s[0] * perp[0], off * unit[1] + s[0] * perp[1]])
                    .with_derivative(move |_| DMatrix::from_column_slice(2, 1, &perp));
                Chart::new("level_line", map, vec![-8.0], vec![8.0])
            }),
            level_range: Arc::new(|eps| (-8.0 * eps.sqrt(), 8.0 * eps.sqrt())),
            sampling: Arc::new(move |eps| {
                let w = 8.0 * eps.sqrt() / na;
                SamplingChart::new("rotated", vec![-w, -8.0], vec![w, 8.0], move |u| {
                    (vec![u[0] * unit[0] + u[1] * perp[0], u[0] * unit[1] + u[1] * perp[1]], 1.0)
                })
            }),
            oracle: Some(Arc::new(move |eps| PI.sqrt() * na / (na * na + eps).sqrt())),
        }
    }

    /// Replaces `K`; the closed form no longer applies.
    pub fn with_integrand<F>(mut self, name: &str, k: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.integrand_name = name.to_string();
        self.integrand = Arc::new(k);
        self.oracle = None;
        self
    }

    fn level_integral(&self, eps: f64) -> f64 {
        let (lo, hi) = (self.level_range)(eps);
        let mut acc = 0.0;
        let panels = 8;
        let w = (hi - lo) / panels as f64;
        for p in 0..panels {
            for (c, wc) in gauss_legendre_on(32, lo + p as f64 * w, lo + (p + 1) as f64 * w) {
                let chart = (self.level_chart)(c);
                let inner = chart.quadrature(
                    |x| (self.integrand)(&chart.map.eval_unchecked(x)) * volume_factor(&chart.map, x).unwrap_or(0.0),
                    16,
                    8,
                );
                acc += wc * gaussian_delta(&[c], eps) * inner;
            }
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoareaLevel {
    pub eps: f64,
    pub lhs: MCIntegralResult,
    pub rhs: f64,
    pub z: f64,
    pub oracle: Option<f64>,
    pub oracle_z: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoareaReport {
    pub case: String,
    pub integrand: String,
    pub levels: Vec<CoareaLevel>,
    /// LHS extrapolated to ε = 0 through every level.
    pub lhs_limit: Option<(f64, f64)>,
    pub pass: bool,
}

/// `∫K δ_ε(h) Jh dz` by MC against the level-set disintegration by quadrature.
pub fn coarea_check(case: &CoareaCase, eps_schedule: &[f64], n_samples: usize, seed: u64) -> Result<CoareaReport> {
    check_schedule(eps_schedule)?;
    let charts: Vec<SamplingChart> = eps_schedule.iter().map(|&e| (case.sampling)(e)).collect();
    let cols = mc_columns(2, n_samples, seed, |u| {
        charts
            .iter()
            .zip(eps_schedule)
            .map(|(ch, &eps)| {
                let (z, w) = ch.point(u);
                let h = case.constraint.eval_unchecked(&z);
                Ok((case.integrand)(&z) * gaussian_delta(&h, eps) * jh(&case.constraint, &z)? * w)
            })
            .collect()
    })?;
    let mut levels = Vec::new();
    for (k, &eps) in eps_schedule.iter().enumerate() {
        let lhs = integral(&cols[k], &charts[k].name);
        let rhs = case.level_integral(eps);
        let z = z_score(lhs.mean - rhs, lhs.stderr, rhs);
        let oracle = case.oracle.as_ref().map(|o| o(eps));
        let oracle_z = oracle.map(|o| z_score(lhs.mean - o, lhs.stderr, o));
        levels.push(CoareaLevel {
            eps,
            pass: z <= 3.0 && oracle_z.is_none_or(|v| v <= 3.0),
            lhs,
            rhs,
            z,
            oracle,
            oracle_z,
        });
    }
    let lhs_limit = (eps_schedule.len() >= 2).then(|| extrapolated_jackknife(GROUPS, eps_schedule, &cols, |m| m.to_vec()));
    Ok(CoareaReport {
        case: case.name.clone(),
        integrand: case.integrand_name.clone(),
        pass: levels.iter().all(|l| l.pass),
        levels,
        lhs_limit,
    })
}

fn check_schedule(eps: &[f64]) -> Result<()> {
    if eps.is_empty() {
        return Err(LabError::config("epsilon_schedule", "schedule is empty"));
    }
    if let Some(bad) = eps.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(LabError::config("epsilon_schedule", format!("ε must be positive, got {bad}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelationLevel {
    pub eps: f64,
    pub rhs: Vec<MCIntegralResult>,
    /// `lhs_F / rhs_F` divided by the same ratio for the first integrand.
    pub normalized: Vec<RatioEstimate>,
    /// First-integrand ratio over `(πε)^{(l-m)/2}`; tends to 1.
    pub normalization: RatioEstimate,
    pub spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelationReport {
    pub geometry: String,
    pub codim: usize,
    pub rank: usize,
    pub lhs: Vec<f64>,
    pub levels: Vec<RelationLevel>,
    /// Normalized ratios extrapolated to ε = 0 through every level; the
    /// stderr includes the extrapolation truncation estimate.
    pub extrapolated: Vec<RatioEstimate>,
    pub max_spread: f64,
    pub pass: bool,
}

/// Ratio constancy of `∫F(g)dvol` against `∫F δ_ε(h) Jh/Jg dz` across the
/// geometry's integrand family.
///
/// Passes when every normalized ratio, extrapolated to ε = 0, is within 3σ of
/// 1 and the raw spread at the smallest ε is below `max_spread`.
pub fn relation_check(
    geom: &Geometry,
    eps_schedule: &[f64],
    n_samples: usize,
    seed: u64,
    max_spread: f64,
) -> Result<RelationReport> {
    check_schedule(eps_schedule)?;
    let fam = &geom.integrands;
    if fam.len() < 5 {
        return Err(LabError::config(
            format!("jacobians.geometry.{}.integrands", geom.name),
            format!("need at least 5 integrands, got {}", fam.len()),
        ));
    }
    let lhs: Vec<f64> = fam.iter().map(|f| geom.chart.parameter_integral(f)).collect();
    let charts: Vec<SamplingChart> = eps_schedule.iter().map(|&e| geom.sampling_chart(e)).collect();
    let cols = mc_columns(geom.ambient_dim, n_samples, seed, |u| {
        let mut row = Vec::with_capacity(charts.len() * fam.len());
        for (ch, &eps) in charts.iter().zip(eps_schedule) {
            let (z, w) = ch.point(u);
            let h = geom.constraint.eval_unchecked(&z);
            let d = gaussian_delta(&h, eps);
            let weight = if d == 0.0 {
                0.0
            } else {
                d * jh(&geom.constraint, &z)? / (geom.jg_ambient)(&z) * w
            };
            row.extend(fam.iter().map(|f| f.eval(&z) * weight));
        }
        Ok(row)
    })?;
    let excess = (geom.codim() - geom.rank) as f64 / 2.0;
    let nf = fam.len();
    let mut levels = Vec::new();
    for (k, (&eps, ch)) in eps_schedule.iter().zip(&charts).enumerate() {
        let block = &cols[k * nf..(k + 1) * nf];
        let rhs: Vec<MCIntegralResult> = block.iter().map(|c| integral(c, &ch.name)).collect();
        let normalized: Vec<RatioEstimate> = (0..nf)
            .map(|j| {
                let (value, stderr) = jackknife(&[block[0].clone(), block[j].clone()], GROUPS, |m| {
                    (lhs[j] * m[0]) / (lhs[0] * m[1])
                });
                RatioEstimate {
                    integrand: fam[j].source().to_string(),
                    value,
                    stderr,
                    z: z_score(value - 1.0, stderr, 1.0),
                }
            })
            .collect();
        let scale = (PI * eps).powf(excess);
        let (value, stderr) = jackknife(&[block[0].clone()], GROUPS, |m| lhs[0] / m[0] / scale);
        let normalization = RatioEstimate {
            integrand: fam[0].source().to_string(),
            value,
            stderr,
            z: z_score(value - 1.0, stderr, 1.0),
        };
        let spread = normalized.iter().map(|r| (r.value - 1.0).abs()).fold(0.0, f64::max);
        levels.push(RelationLevel {
            eps,
            rhs,
            normalized,
            normalization,
            spread,
        });
    }
    let extrapolated: Vec<RatioEstimate> = (0..nf)
        .map(|j| {
            let pick: Vec<Vec<f64>> = (0..eps_schedule.len())
                .flat_map(|k| [cols[k * nf].clone(), cols[k * nf + j].clone()])
                .collect();
            let (value, stderr) = extrapolated_jackknife(GROUPS, eps_schedule, &pick, |m| {
                m.chunks(2).map(|p| (lhs[j] * p[0]) / (lhs[0] * p[1])).collect()
            });
            RatioEstimate {
                integrand: fam[j].source().to_string(),
                value,
                stderr,
                z: z_score(value - 1.0, stderr, 1.0),
            }
        })
        .collect();
    let smallest = (0..levels.len()).min_by(|&a, &b| eps_schedule[a].total_cmp(&eps_schedule[b])).unwrap_or(0);
    let within = extrapolated.iter().all(|r| r.z <= 3.0);
    let spread_ok = levels[smallest].spread < max_spread;
    Ok(RelationReport {
        geometry: geom.name.clone(),
        codim: geom.codim(),
        rank: geom.rank,
        lhs,
        levels,
        extrapolated,
        max_spread,
        pass: within && spread_ok,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaLimitReport {
    pub geometry: String,
    pub codim: usize,
    pub rank: usize,
    pub expected: f64,
    pub eps: Vec<f64>,
    /// `∫ gaussian_l(h̃) Jh` per ε.
    pub full: Vec<MCIntegralResult>,
    /// Same with the rank-m Gaussian of the range components of `h̃`.
    pub reduced: Vec<MCIntegralResult>,
    /// Slope of `log(reduced/full)` against `log(πε)`.
    pub exponent: Option<(f64, f64)>,
    /// Minus the slope of `log(full)` against `log(πε)`.
    pub raw_exponent: Option<(f64, f64)>,
    pub inconclusive: bool,
    pub pass: bool,
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Scaling of the rank-deficient Gaussian against its rank-m reduction.
/// Needs at least three ε values, otherwise the report is inconclusive.
pub fn delta_limit_check(geom: &Geometry, eps_schedule: &[f64], n_samples: usize, seed: u64) -> Result<DeltaLimitReport> {
    check_schedule(eps_schedule)?;
    let (l, m) = (geom.codim(), geom.rank);
    let expected = (l - m) as f64 / 2.0;
    let charts: Vec<SamplingChart> = eps_schedule.iter().map(|&e| geom.sampling_chart(e)).collect();
    let cols = mc_columns(geom.ambient_dim, n_samples, seed, |u| {
        let mut row = Vec::with_capacity(2 * charts.len());
        for (ch, &eps) in charts.iter().zip(eps_schedule) {
            let (z, w) = ch.point(u);
            let h = DVector::from_vec(geom.constraint.eval_unchecked(&z));
            let svd = geom.constraint.derivative(&z)?.svd(true, false);
            let u_range = svd.u.as_ref().expect("left singular vectors").columns(0, m).into_owned();
            let reduced = u_range.transpose() * &h;
            let j = jh(&geom.constraint, &z)?;
            row.push(gaussian_delta(h.as_slice(), eps) * j * w);
            row.push(gaussian_delta(reduced.as_slice(), eps) * j * w);
        }
        Ok(row)
    })?;
    let full: Vec<MCIntegralResult> = (0..charts.len()).map(|k| integral(&cols[2 * k], &charts[k].name)).collect();
    let reduced: Vec<MCIntegralResult> = (0..charts.len()).map(|k| integral(&cols[2 * k + 1], &charts[k].name)).collect();
    let inconclusive = eps_schedule.len() < 3;
    let (exponent, raw_exponent) = if inconclusive {
        (None, None)
    } else {
        let lx: Vec<f64> = eps_schedule.iter().map(|e| (PI * e).ln()).collect();
        let ratio = jackknife(&cols, GROUPS, |mm| {
            let y: Vec<f64> = (0..lx.len()).map(|k| (mm[2 * k + 1] / mm[2 * k]).ln()).collect();
            slope(&lx, &y)
        });
        let raw = jackknife(&cols, GROUPS, |mm| {
            let y: Vec<f64> = (0..lx.len()).map(|k| mm[2 * k].ln()).collect();
            -slope(&lx, &y)
        });
        (Some(ratio), Some(raw))
    };
    let near = |e: Option<(f64, f64)>| e.is_some_and(|(v, _)| (v - expected).abs() <= 0.05);
    Ok(DeltaLimitReport {
        geometry: geom.name.clone(),
        codim: l,
        rank: m,
        expected,
        eps: eps_schedule.to_vec(),
        full,
        reduced,
        pass: !inconclusive && near(exponent) && near(raw_exponent),
        exponent,
        raw_exponent,
        inconclusive,
    })
}

/// A submersion `h: R^{n+m} → R^m` whose zero set is a graph over the first
/// `n` coordinates.
#[derive(Clone, Debug)]
pub struct GraphCase {
    pub name: String,
    pub constraint: SmoothMap,
    pub n_par: usize,
    pub points: Vec<Vec<f64>>,
    /// Box of parallel coordinates for the MC relation.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub integrands: Vec<Poly>,
}

impl GraphCase {
    /// `h(x, y) = y - x²`.
    pub fn parabola() -> Self {
        let h = SmoothMap::new(2, 1, |z| vec![z[1] - z[0] * z[0]])
            .with_derivative(|z| DMatrix::from_row_slice(1, 2, &[-2.0 * z[0], 1.0]));
        GraphCase {
            name: "parabola".into(),
            constraint: h,
            n_par: 1,
            points: vec![vec![-1.0], vec![0.0], vec![1.0]],
            lo: vec![-1.0],
            hi: vec![1.0],
            integrands: ["1", "x^2", "1 + y", "x*y + 2", "y^2 + x^4"]
                .iter()
                .map(|s| Poly::parse(s).expect("literal"))
                .collect(),
        }
    }

    /// `h(z) = C z + b` with `C` random `m × (n+m)` and a well-conditioned
    /// perpendicular block.
    pub fn random_linear(n: usize, m: usize, seed: u64) -> Self {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = substream(seed, 0);
        let mut c = DMatrix::from_fn(m, n + m, |_, _| rng.sample::<f64, _>(StandardNormal));
        for i in 0..m {
            c[(i, n + i)] += 3.0;
        }
        let b = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c2 = c.clone();
        let h = SmoothMap::new(n + m, m, move |z| (&c * DVector::from_column_slice(z) + &b).as_slice().to_vec())
            .with_derivative(move |_| c2.clone());
        let vars = ["x", "y", "z", "w"];
        let first = vars[0];
        let last = vars[(n + m - 1).min(3)];
        let integrands = [
            "1".to_string(),
            format!("{first}^2"),
            format!("1 + {last}"),
            format!("{first}*{last} + 3"),
            format!("{last}^2 + {first}^4"),
        ]
        .iter()
        .map(|s| Poly::parse(s).expect("generated"))
        .collect();
        GraphCase {
            name: format!("linear_{n}x{m}"),
            constraint: h,
            n_par: n,
            points: (0..3).map(|k| (0..n).map(|j| k as f64 - 1.0 + 0.3 * j as f64).collect()).collect(),
            lo: vec![-1.0; n],
            hi: vec![1.0; n],
            integrands,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphOptions {
    pub eps_schedule: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
    /// Step for the central difference of the implicit function.
    pub fd_step: f64,
    pub tolerance: f64,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            eps_schedule: vec![4e-4, 2e-4, 1e-4],
            n_samples: 100_000,
            seed: 0,
            fd_step: 1e-3,
            tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphCasePoint {
    pub point: Vec<f64>,
    pub perp: Vec<f64>,
    pub sylvester: (f64, f64),
    pub sylvester_error: f64,
    /// `max |Dg⊥ - FD(g⊥)|`.
    pub derivative_error: f64,
    pub jacobian_ratio: f64,
    pub det_perp: f64,
    pub jacobian_error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphCaseReport {
    pub case: String,
    pub points: Vec<GraphCasePoint>,
    /// `∫F(x, g⊥(x))dx / ∫F δ_ε(h)|det D⊥h| dz` at the smallest ε.
    pub raw_ratios: Vec<RatioEstimate>,
    /// The same ratios extrapolated to ε = 0; they tend to 1.
    pub ratios: Vec<RatioEstimate>,
    pub pass: bool,
}

fn split_derivative(d: &DMatrix<f64>, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = d.nrows();
    (d.columns(0, n).into_owned(), d.columns(n, m).into_owned())
}

/// Newton solve of `h(x, y) = 0` for `y`.
fn solve_perp(h: &SmoothMap, x: &[f64], guess: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    let mut y = guess.to_vec();
    for _ in 0..60 {
        let z: Vec<f64> = x.iter().chain(&y).copied().collect();
        let r = DVector::from_vec(h.eval(&z)?);
        let scale = 1.0 + z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if r.amax() <= 1e-15 * scale {
            return Ok(y);
        }
        let (_, dp) = split_derivative(&h.derivative(&z)?, n);
        let step = dp
            .lu()
            .solve(&r)
            .ok_or_else(|| LabError::NewtonDivergence(format!("D⊥h singular at {z:?}")))?;
        for (yi, s) in y.iter_mut().zip(step.iter()) {
            *yi -= s;
        }
        if step.amax() <= 1e-16 * scale {
            return Ok(y);
        }
    }
    let z: Vec<f64> = x.iter().chain(&y).copied().collect();
    let res = DVector::from_vec(h.eval(&z)?).amax();
    if res <= 1e-12 {
        Ok(y)
    } else {
        Err(LabError::NewtonDivergence(format!("residual {res:e} after 60 steps at x = {x:?}")))
    }
}

fn graph_point(case: &GraphCase, x: &[f64], opts: &GraphOptions) -> Result<GraphCasePoint> {
    let h = &case.constraint;
    let n = case.n_par;
    let m = h.n_out();
    let y = solve_perp(h, x, &vec![0.0; m])?;
    let z: Vec<f64> = x.iter().chain(&y).copied().collect();
    let (dpar, dperp) = split_derivative(&h.derivative(&z)?, n);
    let inv = dperp
        .clone()
        .try_inverse()
        .ok_or_else(|| LabError::NewtonDivergence(format!("D⊥h singular at {z:?}")))?;
    let mg = -(&inv * &dpar);
    let (sl, sr) = sylvester_sides(&mg);
    let mut derivative_error = 0.0f64;
    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += opts.fd_step;
        xm[j] -= opts.fd_step;
        let yp = solve_perp(h, &xp, &y)?;
        let ym = solve_perp(h, &xm, &y)?;
        for i in 0..m {
            let fd = (yp[i] - ym[i]) / (2.0 * opts.fd_step);
            derivative_error = derivative_error.max((fd - mg[(i, j)]).abs());
        }
    }
    let jg_val = (DMatrix::identity(n, n) + mg.transpose() * &mg).determinant().sqrt();
    let jacobian_ratio = jh(h, &z)? / jg_val;
    let det_perp = dperp.determinant().abs();
    let sylvester_error = (sl - sr).abs() / sl.abs().max(1.0);
    let jacobian_error = (jacobian_ratio - det_perp).abs() / det_perp.max(1.0);
    Ok(GraphCasePoint {
        point: x.to_vec(),
        perp: y,
        sylvester: (sl, sr),
        pass: sylvester_error <= opts.tolerance && derivative_error <= opts.tolerance && jacobian_error <= opts.tolerance,
        sylvester_error,
        derivative_error,
        jacobian_ratio,
        det_perp,
        jacobian_error,
    })
}

/// Implicit-function identities at the case's points and the graph-form
/// relation by MC.
pub fn graph_case_check(case: &GraphCase, opts: &GraphOptions) -> Result<GraphCaseReport> {
    let points = case
        .points
        .iter()
        .map(|x| graph_point(case, x, opts))
        .collect::<Result<Vec<_>>>()?;
    let h = &case.constraint;
    let (n, m) = (case.n_par, h.n_out());
    let fam = &case.integrands;
    let eps = &opts.eps_schedule;
    check_schedule(eps)?;
    let vol_x: f64 = case.lo.iter().zip(&case.hi).map(|(l, h)| h - l).product();
    let cols = mc_columns(n + m, opts.n_samples, opts.seed, |u| {
        let x: Vec<f64> = (0..n).map(|j| case.lo[j] + u[j] * (case.hi[j] - case.lo[j])).collect();
        let y = solve_perp(h, &x, &vec![0.0; m])?;
        let on: Vec<f64> = x.iter().chain(&y).copied().collect();
        let (_, dperp) = split_derivative(&h.derivative(&on)?, n);
        let b = dperp
            .try_inverse()
            .ok_or_else(|| LabError::NewtonDivergence(format!("D⊥h singular at {on:?}")))?;
        let det_b = b.determinant().abs();
        let mut row: Vec<f64> = fam.iter().map(|f| f.eval(&on) * vol_x).collect();
        for &e in eps {
            // chart z = (x, g⊥(x) + B(x)s), Jacobian |det B(x)|
            let w = 8.0 * e.sqrt();
            let s = DVector::from_fn(m, |i, _| (2.0 * u[n + i] - 1.0) * w);
            let t = &b * s;
            let z: Vec<f64> = x.iter().copied().chain(y.iter().zip(t.iter()).map(|(a, b)| a + b)).collect();
            let (_, dz) = split_derivative(&h.derivative(&z)?, n);
            let weight = gaussian_delta(&h.eval_unchecked(&z), e)
                * dz.determinant().abs()
                * det_b
                * vol_x
                * (2.0 * w).powi(m as i32);
            row.extend(fam.iter().map(|f| f.eval(&z) * weight));
        }
        Ok(row)
    })?;
    let nf = fam.len();
    let estimate = |j: usize, value: f64, stderr: f64| RatioEstimate {
        integrand: fam[j].source().to_string(),
        value,
        stderr,
        z: z_score(value - 1.0, stderr, 1.0),
    };
    let smallest = (0..eps.len()).min_by(|&a, &b| eps[a].total_cmp(&eps[b])).unwrap_or(0);
    let raw_ratios: Vec<RatioEstimate> = (0..nf)
        .map(|j| {
            let pick = [cols[j].clone(), cols[nf * (1 + smallest) + j].clone()];
            let (v, se) = jackknife(&pick, GROUPS, |mm| mm[0] / mm[1]);
            estimate(j, v, se)
        })
        .collect();
    let ratios: Vec<RatioEstimate> = (0..nf)
        .map(|j| {
            let pick: Vec<Vec<f64>> = std::iter::once(cols[j].clone())
                .chain((0..eps.len()).map(|k| cols[nf * (1 + k) + j].clone()))
                .collect();
            let (v, se) = extrapolated_jackknife(GROUPS, eps, &pick, |mm| mm[1..].iter().map(|d| mm[0] / d).collect());
            estimate(j, v, se)
        })
        .collect();
    Ok(GraphCaseReport {
        case: case.name.clone(),
        pass: points.iter().all(|p| p.pass) && ratios.iter().all(|r| r.z <= 3.0),
        points,
        raw_ratios,
        ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jacobians::{chart_by_name, default_catalog, GeometrySpec};

    fn geometry(name: &str) -> Geometry {
        let spec = default_catalog().into_iter().find(|g| g.name == name).unwrap();
        Geometry::from_spec(&spec).unwrap()
    }

    fn poly(s: &str) -> Poly {
        Poly::parse(s).unwrap()
    }

    #[test]
    fn circle_charts_agree_on_circumference() {
        let g1 = chart_by_name("circle_angle").unwrap();
        let g2 = chart_by_name("circle_double_angle").unwrap();
        let r = area_formula_check(&poly("1"), &g1, &g2, 20_000, 3).unwrap();
        assert!(r.pass, "{r:?}");
        for v in [&r.direct, &r.routed, &r.hausdorff[0], &r.hausdorff[1]] {
            assert!((v.mean - 2.0 * PI).abs() <= 1e-9, "{v:?}");
        }
        let zero = area_formula_check(&poly("0"), &g1, &g2, 1000, 3).unwrap();
        assert!(zero.pass);
        assert_eq!(zero.direct.mean, 0.0);
        assert_eq!(zero.routed.mean, 0.0);
    }

    #[test]
    fn sphere_charts_match_closed_form() {
        let g1 = chart_by_name("sphere_cylindrical").unwrap();
        let g2 = chart_by_name("sphere_polar").unwrap();
        let r = area_formula_check(&poly("z^2"), &g1, &g2, 40_000, 5).unwrap();
        assert!(r.pass, "{r:?}");
        let exact = 4.0 * PI / 3.0;
        for v in [&r.direct, &r.routed, &r.hausdorff[0], &r.hausdorff[1]] {
            assert!((v.mean - exact).abs() <= 3.0 * v.stderr.max(1e-12), "{v:?}");
        }
    }

    #[test]
    fn mismatched_charts_are_rejected() {
        let g1 = chart_by_name("circle_angle").unwrap();
        let g2 = chart_by_name("circle_radius2").unwrap();
        assert!(matches!(
            area_formula_check(&poly("1"), &g1, &g2, 100, 0),
            Err(LabError::ChartMismatch(_))
        ));
        let spec = GeometrySpec {
            name: "bad".into(),
            surface: "circle".into(),
            chart: "circle_angle".into(),
            area_charts: Some(["circle_angle".into(), "circle_radius2".into()]),
            padding: vec![],
            integrands: vec!["1".into()],
        };
        assert!(matches!(Geometry::from_spec(&spec), Err(LabError::ChartMismatch(_))));
        let spec = GeometrySpec {
            chart: "sphere_polar".into(),
            area_charts: None,
            ..spec
        };
        assert!(matches!(Geometry::from_spec(&spec), Err(LabError::ChartMismatch(_))));
    }

    #[test]
    fn coarea_radial_and_linear() {
        let r = coarea_check(&CoareaCase::radial(), &[1e-2, 1e-3], 40_000, 11).unwrap();
        assert!(r.pass, "{r:#?}");
        let last = &r.levels[1];
        assert!((last.lhs.mean - 2.0 * PI).abs() <= 3.0 * last.lhs.stderr);
        assert!((last.rhs - 2.0 * PI).abs() <= 1e-9);

        let a = [0.6, -1.3];
        let r = coarea_check(&CoareaCase::linear(a), &[1e-1, 1e-2, 1e-3], 40_000, 12).unwrap();
        assert!(r.pass, "{r:#?}");
        let na2 = a[0] * a[0] + a[1] * a[1];
        for l in &r.levels {
            let exact = (PI * na2 / (na2 + l.eps)).sqrt();
            assert!((l.rhs - exact).abs() <= 1e-9 * exact, "{l:?}");
        }

        let zero = coarea_check(&CoareaCase::radial().with_integrand("0", |_| 0.0), &[1e-3], 1000, 1).unwrap();
        assert!(zero.pass);
        assert_eq!(zero.levels[0].lhs.mean, 0.0);
        assert_eq!(zero.levels[0].rhs, 0.0);
    }

    #[test]
    fn relation_holds_for_submersion_and_padded_maps() {
        let eps = [4e-4, 2e-4, 1e-4];
        let sub = relation_check(&geometry("circle"), &eps, 200_000, 21, 1e-2).unwrap();
        assert!(sub.pass, "{sub:#?}");
        let pad = relation_check(&geometry("circle_padded"), &eps, 200_000, 21, 1e-2).unwrap();
        assert!(pad.pass, "{pad:#?}");
        // closed-form circle integrals of the family
        let exact = [2.0 * PI, PI, 3.0 * PI, PI / 4.0, 3.0 * PI / 4.0];
        for (l, e) in sub.lhs.iter().zip(exact) {
            assert!((l - e).abs() < 1e-10, "{l} vs {e}");
        }
        // same limit for the padded map
        for (a, b) in sub.extrapolated.iter().zip(&pad.extrapolated) {
            assert!((a.value - b.value).abs() <= 3.0 * a.stderr.hypot(b.stderr) + 1e-12, "{a:?} {b:?}");
        }
        // δ_ε of (h, 2h) with Jh is (πε)^{-1/2} times δ_{ε/5}(h) with Jh(h)
        let fifth: Vec<f64> = eps.iter().map(|e| e / 5.0).collect();
        let sub5 = relation_check(&geometry("circle"), &fifth, 200_000, 21, 1e-2).unwrap();
        for (la, lb) in sub5.levels.iter().zip(&pad.levels) {
            for (a, b) in la.normalized.iter().zip(&lb.normalized) {
                assert!((a.value - b.value).abs() < 1e-10, "{a:?} {b:?}");
            }
        }
        for rep in [&sub, &pad] {
            assert!(rep.levels.windows(2).all(|w| w[1].spread <= w[0].spread), "{rep:#?}");
            let n = &rep.levels[2].normalization;
            assert!((n.value - 1.0).abs() <= 3.0 * n.stderr + 1e-4, "{n:?}");
        }
        let sphere = relation_check(&geometry("sphere"), &eps, 200_000, 22, 1e-2).unwrap();
        assert!(sphere.pass, "{sphere:#?}");
    }

    #[test]
    fn delta_limit_exponents() {
        let eps = [1e-1, 1e-2, 1e-3, 1e-4];
        for (name, expected) in [("circle", 0.0), ("circle_padded", 0.5), ("circle_padded2", 1.0)] {
            let r = delta_limit_check(&geometry(name), &eps, 50_000, 31).unwrap();
            assert_eq!(r.expected, expected);
            assert!(r.pass, "{r:#?}");
        }
        let short = delta_limit_check(&geometry("circle_padded"), &[1e-3], 1000, 31).unwrap();
        assert!(short.inconclusive && !short.pass && short.exponent.is_none());
    }

    #[test]
    fn graph_case_identities() {
        let r = graph_case_check(&GraphCase::parabola(), &GraphOptions::default()).unwrap();
        assert!(r.pass, "{r:#?}");
        for p in &r.points {
            let x = p.point[0];
            assert!((p.perp[0] - x * x).abs() < 1e-12);
            let s = 1.0 + 4.0 * x * x;
            assert!((p.sylvester.0 - s).abs() < 1e-12 && (p.sylvester.1 - s).abs() < 1e-12);
            assert!((p.det_perp - 1.0).abs() < 1e-12);
        }
        let exact = GraphOptions {
            fd_step: 0.5,
            tolerance: 1e-12,
            ..GraphOptions::default()
        };
        for (n, m) in [(1, 1), (2, 1), (2, 2), (1, 3)] {
            let r = graph_case_check(&GraphCase::random_linear(n, m, 40 + n as u64), &exact).unwrap();
            assert!(r.pass, "{r:#?}");
        }
    }

    #[test]
    fn flat_graph_is_trivial() {
        let h = SmoothMap::linear(DMatrix::from_row_slice(1, 2, &[0.0, 2.0]));
        let case = GraphCase {
            name: "flat".into(),
            constraint: h,
            n_par: 1,
            points: vec![vec![0.3]],
            lo: vec![-1.0],
            hi: vec![1.0],
            integrands: vec![poly("1"), poly("x^2")],
        };
        let r = graph_case_check(&case, &GraphOptions { n_samples: 2000, ..GraphOptions::default() }).unwrap();
        let p = &r.points[0];
        assert_eq!(p.sylvester, (1.0, 1.0));
        assert_eq!(p.jacobian_ratio, 2.0);
        assert_eq!(p.det_perp, 2.0);
        assert!(r.pass, "{r:#?}");
    }
}
