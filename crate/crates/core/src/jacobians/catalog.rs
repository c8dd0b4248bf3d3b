//! Charts, sampling charts and the declarative geometry catalog.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{volume_factor, Poly, SmoothMap};
use crate::quadrature::gauss_legendre_on;
use crate::{LabError, Result};

type InverseFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type SampleFn = Arc<dyn Fn(&[f64]) -> (Vec<f64>, f64) + Send + Sync>;
type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A parametrization `g: [lo, hi] → R^N` of a surface.
#[derive(Clone)]
pub struct Chart {
    pub name: String,
    pub map: SmoothMap,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub inverse: Option<InverseFn>,
}

impl std::fmt::Debug for Chart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Chart({} on {:?}..{:?})", self.name, self.lo, self.hi)
    }
}

impl Chart {
    pub fn new(name: &str, map: SmoothMap, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Chart {
            name: name.to_string(),
            map,
            lo,
            hi,
            inverse: None,
        }
    }

    pub fn with_inverse<F>(mut self, inv: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.inverse = Some(Arc::new(inv));
        self
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    /// Point of the domain at unit-cube coordinates `u`.
    pub fn at(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(t, (l, h))| l + t * (h - l))
            .collect()
    }

    /// Tensor Gauss-Legendre quadrature of `f(x)` over the domain.
    pub fn quadrature<F: Fn(&[f64]) -> f64>(&self, f: F, order: usize, panels: usize) -> f64 {
        let rules: Vec<Vec<(f64, f64)>> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| {
                let w = (h - l) / panels as f64;
                (0..panels)
                    .flat_map(|p| gauss_legendre_on(order, l + p as f64 * w, l + (p + 1) as f64 * w))
                    .collect()
            })
            .collect();
        let sizes: Vec<usize> = rules.iter().map(Vec::len).collect();
        let total: usize = sizes.iter().product();
        let mut acc = 0.0;
        let mut x = vec![0.0; self.dim()];
        for idx in 0..total {
            let mut r = idx;
            let mut w = 1.0;
            for k in 0..self.dim() {
                let (xk, wk) = rules[k][r % sizes[k]];
                r /= sizes[k];
                x[k] = xk;
                w *= wk;
            }
            acc += w * f(&x);
        }
        acc
    }

    /// `∫ F(g(x)) Jg(x) dx`, the Hausdorff integral of `F` over the image.
    pub fn hausdorff_integral(&self, f: &Poly) -> f64 {
        self.quadrature(
            |x| f.eval(&self.map.eval_unchecked(x)) * volume_factor(&self.map, x).unwrap_or(0.0),
            16,
            8,
        )
    }

    /// `∫ F(g(x)) dx` over the flat parameter domain.
    pub fn parameter_integral(&self, f: &Poly) -> f64 {
        self.quadrature(|x| f.eval(&self.map.eval_unchecked(x)), 16, 8)
    }
}

/// Change of variables `u ∈ [lo, hi] ↦ z` with `|det Dz(u)|`, used to put MC
/// samples where an integrand lives.
#[derive(Clone)]
pub struct SamplingChart {
    pub name: String,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    map: SampleFn,
}

impl SamplingChart {
    pub fn new<F>(name: &str, lo: Vec<f64>, hi: Vec<f64>, map: F) -> Self
    where
        F: Fn(&[f64]) -> (Vec<f64>, f64) + Send + Sync + 'static,
    {
        SamplingChart {
            name: name.to_string(),
            lo,
            hi,
            map: Arc::new(map),
        }
    }

    pub fn cartesian(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        SamplingChart::new("cartesian", lo, hi, |u| (u.to_vec(), 1.0))
    }

    /// Polar (D = 2) or spherical (D = 3) shell `r ∈ [r_lo, r_hi]`.
    pub fn shell(dim: usize, r_lo: f64, r_hi: f64) -> Self {
        match dim {
            2 => SamplingChart::new("polar_shell", vec![r_lo, 0.0], vec![r_hi, 2.0 * PI], |u| {
                let (s, c) = u[1].sin_cos();
                (vec![u[0] * c, u[0] * s], u[0])
            }),
            _ => SamplingChart::new("spherical_shell", vec![r_lo, 0.0, 0.0], vec![r_hi, PI, 2.0 * PI], |u| {
                let (st, ct) = u[1].sin_cos();
                let (sp, cp) = u[2].sin_cos();
                (vec![u[0] * st * cp, u[0] * st * sp, u[0] * ct], u[0] * u[0] * st)
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    /// Ambient point and density weight (`|det| × box volume`) for unit-cube `t`.
    pub fn point(&self, t: &[f64]) -> (Vec<f64>, f64) {
        let u: Vec<f64> = t
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(t, (l, h))| l + t * (h - l))
            .collect();
        let (z, j) = (self.map)(&u);
        (z, j * self.volume())
    }
}

fn circle_chart(name: &str, radius: f64, speed: f64) -> Chart {
    let map = SmoothMap::new(1, 2, move |x| {
        let (s, c) = (speed * x[0]).sin_cos();
        vec![radius * c, radius * s]
    })
    .with_derivative(move |x| {
        let (s, c) = (speed * x[0]).sin_cos();
        DMatrix::from_column_slice(2, 1, &[-radius * speed * s, radius * speed * c])
    });
    Chart::new(name, map, vec![0.0], vec![2.0 * PI / speed])
        .with_inverse(move |y| vec![y[1].atan2(y[0]).rem_euclid(2.0 * PI) / speed])
}

fn sphere_polar() -> Chart {
    let map = SmoothMap::new(2, 3, |x| {
        let (st, ct) = x[0].sin_cos();
        let (sp, cp) = x[1].sin_cos();
        vec![st * cp, st * sp, ct]
    })
    .with_derivative(|x| {
        let (st, ct) = x[0].sin_cos();
        let (sp, cp) = x[1].sin_cos();
        DMatrix::from_row_slice(3, 2, &[ct * cp, -st * sp, ct * sp, st * cp, -st, 0.0])
    });
    Chart::new("sphere_polar", map, vec![0.0, 0.0], vec![PI, 2.0 * PI])
        .with_inverse(|y| vec![y[2].clamp(-1.0, 1.0).acos(), y[1].atan2(y[0]).rem_euclid(2.0 * PI)])
}

fn sphere_cylindrical() -> Chart {
    let map = SmoothMap::new(2, 3, |x| {
        let rho = (1.0 - x[0] * x[0]).max(0.0).sqrt();
        let (sp, cp) = x[1].sin_cos();
        vec![rho * cp, rho * sp, x[0]]
    })
    .with_derivative(|x| {
        let rho = (1.0 - x[0] * x[0]).max(1e-300).sqrt();
        let (sp, cp) = x[1].sin_cos();
        DMatrix::from_row_slice(3, 2, &[-x[0] / rho * cp, -rho * sp, -x[0] / rho * sp, rho * cp, 1.0, 0.0])
    });
    Chart::new("sphere_cylindrical", map, vec![-1.0, 0.0], vec![1.0, 2.0 * PI])
        .with_inverse(|y| vec![y[2], y[1].atan2(y[0]).rem_euclid(2.0 * PI)])
}

/// Chart library by name.
pub fn chart_by_name(name: &str) -> Option<Chart> {
    Some(match name {
        "circle_angle" => circle_chart("circle_angle", 1.0, 1.0),
        "circle_double_angle" => circle_chart("circle_double_angle", 1.0, 2.0),
        "circle_radius2" => circle_chart("circle_radius2", 2.0, 1.0),
        "sphere_polar" => sphere_polar(),
        "sphere_cylindrical" => sphere_cylindrical(),
        _ => return None,
    })
}

/// Catalog record describing one test geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub name: String,
    /// `circle` (unit circle in R²) or `sphere` (unit sphere in R³).
    pub surface: String,
    pub chart: String,
    /// Two parametrizations of the same surface for the area check.
    #[serde(default)]
    pub area_charts: Option<[String; 2]>,
    /// Extra constraint components `c_k h₁` appended to `h₁ = |z|² - 1`.
    #[serde(default)]
    pub padding: Vec<f64>,
    pub integrands: Vec<String>,
}

/// A surface `S = g(M) = h⁻¹(0)` with its parametrization, constraint map and
/// integrand family.
#[derive(Clone)]
pub struct Geometry {
    pub name: String,
    pub ambient_dim: usize,
    pub chart: Chart,
    pub area_charts: Option<(Chart, Chart)>,
    /// `h̃ = (h₁, c₁h₁, ...)`, constant rank 1.
    pub constraint: SmoothMap,
    pub rank: usize,
    /// `Jg` of `chart` extended off the surface as a function of direction.
    pub jg_ambient: ScalarFn,
    pub integrands: Vec<Poly>,
    padding_norm_sq: f64,
}

impl std::fmt::Debug for Geometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Geometry({}, l = {}, rank = {})", self.name, self.codim(), self.rank)
    }
}

fn unit_constraint(dim: usize, padding: &[f64]) -> SmoothMap {
    let mult: Vec<f64> = std::iter::once(1.0).chain(padding.iter().copied()).collect();
    let m2 = mult.clone();
    SmoothMap::new(dim, mult.len(), move |z| {
        let h1 = z.iter().map(|c| c * c).sum::<f64>() - 1.0;
        mult.iter().map(|c| c * h1).collect()
    })
    .with_derivative(move |z| DMatrix::from_fn(m2.len(), dim, |i, j| 2.0 * m2[i] * z[j]))
    .with_rank(1)
}

impl Geometry {
    pub fn from_spec(spec: &GeometrySpec) -> Result<Geometry> {
        let field = |f: &str| format!("jacobians.geometry.{}.{f}", spec.name);
        let dim = match spec.surface.as_str() {
            "circle" => 2,
            "sphere" => 3,
            other => return Err(LabError::config(field("surface"), format!("unknown surface `{other}`"))),
        };
        let lookup = |name: &str, key: &str| {
            chart_by_name(name).ok_or_else(|| LabError::config(field(key), format!("unknown chart `{name}`")))
        };
        let chart = lookup(&spec.chart, "chart")?;
        probe_chart(&chart, dim)?;
        let area_charts = match &spec.area_charts {
            Some([a, b]) => {
                let pair = (lookup(a, "area_charts")?, lookup(b, "area_charts")?);
                probe_chart(&pair.0, dim)?;
                probe_chart(&pair.1, dim)?;
                Some(pair)
            }
            None => None,
        };
        let jg_ambient: ScalarFn = match spec.chart.as_str() {
            "circle_angle" => Arc::new(|_| 1.0),
            "circle_double_angle" => Arc::new(|_| 2.0),
            "sphere_polar" => Arc::new(|z| (z[0] * z[0] + z[1] * z[1]).sqrt() / z.iter().map(|c| c * c).sum::<f64>().sqrt()),
            "sphere_cylindrical" => Arc::new(|_| 1.0),
            other => return Err(LabError::config(field("chart"), format!("chart `{other}` has no ambient Jacobian"))),
        };
        if spec.integrands.is_empty() {
            return Err(LabError::config(field("integrands"), "need at least one integrand"));
        }
        let integrands = spec
            .integrands
            .iter()
            .map(|s| Poly::parse(s))
            .collect::<Result<Vec<_>>>()?;
        if integrands.iter().any(|p| p.arity() > dim) {
            return Err(LabError::config(field("integrands"), "integrand uses more variables than the ambient space"));
        }
        Ok(Geometry {
            name: spec.name.clone(),
            ambient_dim: dim,
            chart,
            area_charts,
            constraint: unit_constraint(dim, &spec.padding),
            rank: 1,
            jg_ambient,
            integrands,
            padding_norm_sq: 1.0 + spec.padding.iter().map(|c| c * c).sum::<f64>(),
        })
    }

    /// `l`, the number of constraint components.
    pub fn codim(&self) -> usize {
        self.constraint.n_out()
    }

    /// Shell around the unit sphere wide enough for the Gaussian at `eps`.
    pub fn sampling_chart(&self, eps: f64) -> SamplingChart {
        let eff = eps / self.padding_norm_sq;
        let w = 5.0 * eff.sqrt();
        SamplingChart::shell(self.ambient_dim, (1.0 - w).max(0.0), 1.0 + w)
    }
}

/// Every probe point of the chart must land on the unit sphere of `dim`.
fn probe_chart(c: &Chart, dim: usize) -> Result<()> {
    if c.map.n_out() != dim {
        return Err(LabError::ChartMismatch(format!(
            "chart `{}` maps into R^{}, surface lives in R^{dim}",
            c.name,
            c.map.n_out()
        )));
    }
    const PROBES: usize = 17;
    for k in 0..PROBES {
        let t = (k as f64 + 0.5) / PROBES as f64;
        let u: Vec<f64> = (0..c.dim()).map(|j| (t * (j as f64 + 1.0) * 0.618_033_988_75).fract()).collect();
        let y = c.map.eval(&c.at(&u))?;
        let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (r - 1.0).abs() > 1e-9 {
            return Err(LabError::ChartMismatch(format!(
                "chart `{}` leaves the surface: |g(x)| = {r} at probe {k}",
                c.name
            )));
        }
    }
    Ok(())
}

/// The catalog shipped with the default configuration.
pub fn default_catalog() -> Vec<GeometrySpec> {
    let family = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let circle_f = family(&["1", "x^2", "1 + x + y^2", "x^2*y^2", "x^4 + 2*y"]);
    let sphere_f = family(&["1", "z^2", "1 + x*y + z", "x^2*y^2", "x^4 + z^3 + 1"]);
    vec![
        GeometrySpec {
            name: "circle".into(),
            surface: "circle".into(),
            chart: "circle_angle".into(),
            area_charts: Some(["circle_angle".into(), "circle_double_angle".into()]),
            padding: vec![],
            integrands: circle_f.clone(),
        },
        GeometrySpec {
            name: "circle_padded".into(),
            surface: "circle".into(),
            chart: "circle_angle".into(),
            area_charts: None,
            padding: vec![2.0],
            integrands: circle_f.clone(),
        },
        GeometrySpec {
            name: "circle_padded2".into(),
            surface: "circle".into(),
            chart: "circle_angle".into(),
            area_charts: None,
            padding: vec![0.0, -1.0],
            integrands: circle_f,
        },
        GeometrySpec {
            name: "sphere".into(),
            surface: "sphere".into(),
            chart: "sphere_polar".into(),
            area_charts: Some(["sphere_cylindrical".into(), "sphere_polar".into()]),
            padding: vec![],
            integrands: sphere_f,
        },
    ]
}
