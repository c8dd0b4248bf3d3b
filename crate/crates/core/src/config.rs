//! Run configuration. A TOML document with nested sections, parsed with
//! unknown keys rejected and validated before anything is computed.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::connection::{ConnectionField, Family};
use crate::holonomy::MG_SIGN;
use crate::jacobians::{default_catalog, Geometry, GeometrySpec};
use crate::liealg::orthonormal_basis;
use crate::{LabError, Result};

/// The committed default, identical to `configs/default.toml`.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

/// Thresholds every report may refer to, with their defaults.
pub const TOLERANCES: &[(&str, f64)] = &[
    ("mg_relative", 1e-3),
    ("transversality", 1e-12),
    ("nonanticipation", 1e-8),
    ("constraint", 1e-3),
    ("negative_control", 1e-2),
    ("t_map_abelian", 1e-8),
    ("t_map_radial", 1e-4),
    ("equivariance", 1e-10),
    ("radial_gauge", 1e-6),
    ("action_sigma", 3.0),
    ("wrong_dimension_sigma", 5.0),
    ("eom_solution", 1e-6),
    ("eom_control", 1e-2),
    ("eom_cross", 1e-3),
    ("sylvester", 1e-12),
    ("area_sigma", 3.0),
    ("coarea_sigma", 3.0),
    ("graph", 1e-8),
    ("relation_sigma", 3.0),
    ("relation_spread", 1e-2),
    ("delta_exponent", 0.05),
    ("jacobian_spread", 1e-6),
    ("two_sided_sigma", 3.0),
    ("abelian_truncation", 1e-3),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Global sign of the loop variable relative to the holonomy ODE.
    #[serde(default = "default_sign")]
    pub calibration_sign: f64,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default, rename = "connections")]
    pub connection_specs: Vec<ConnectionSpec>,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub kinematics: KinematicsConfig,
    #[serde(default)]
    pub action: ActionConfig,
    #[serde(default)]
    pub eom: EomConfig,
    #[serde(default)]
    pub jacobians: JacobianConfig,
    #[serde(default)]
    pub pcm: PcmConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_sign() -> f64 {
    MG_SIGN
}

/// Declarative connection record: family tag, parameters, seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionSpec {
    pub name: String,
    pub family: String,
    pub dim: usize,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "two")]
    pub degree: u32,
    /// Bump radius, or the envelope radius of the radial family.
    #[serde(default)]
    pub radius: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn two() -> u32 {
    2
}

impl ConnectionSpec {
    /// Abelian families use `f_{μν} = scale (1 + ν - μ)` for `μ < ν` and the
    /// first basis generator.
    pub fn build(&self) -> Result<ConnectionField> {
        let gen = || orthonormal_basis(self.n)[0].clone();
        let family = Family::parse(&self.family).ok_or_else(|| {
            LabError::config(
                format!("connections.{}.family", self.name),
                format!("unknown family `{}`; expected one of {:?}", self.family, Family::NAMES),
            )
        })?;
        match family {
            Family::Zero => ConnectionField::zero(self.dim, self.n),
            Family::AbelianConstantF => {
                let mut f = vec![vec![0.0; self.dim]; self.dim];
                for mu in 0..self.dim {
                    for nu in mu + 1..self.dim {
                        f[mu][nu] = self.scale * (1.0 + (nu - mu) as f64);
                        f[nu][mu] = -f[mu][nu];
                    }
                }
                ConnectionField::abelian_constant_f(&f, gen())
            }
            Family::PolynomialRandom => ConnectionField::polynomial_random(self.dim, self.n, self.degree, self.scale, self.seed),
            Family::GaussianBump => {
                let center = vec![0.1; self.dim];
                ConnectionField::gaussian_bump(self.n, &center, self.radius.unwrap_or(1.0), self.scale, self.seed)
            }
            Family::RadialPolynomial => {
                ConnectionField::radial_polynomial(self.dim, self.n, self.degree, self.scale, self.radius, self.seed)
            }
            Family::MaxwellPolynomial => ConnectionField::maxwell_polynomial(self.dim, self.scale, gen()),
            Family::RadialGauge => unreachable!("not a parseable family"),
        }
        .map_err(|e| LabError::config(format!("connections.{}", self.name), e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureConfig {
    pub epsilon: f64,
    pub cutoff: usize,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig { epsilon: 1.0, cutoff: 12 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KinematicsConfig {
    /// Fixed-step transport count for the exact side.
    pub transport_steps: usize,
    pub fd_h: f64,
    pub fd_width: f64,
    pub fd_levels: usize,
    pub fd_steps: usize,
    /// Loop/parameter samples per connection for the MG identity.
    pub samples: usize,
    pub t_map_points: usize,
    pub quadrature_orders: Vec<usize>,
    pub gauge_steps: usize,
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        KinematicsConfig {
            transport_steps: 4096,
            fd_h: 1e-4,
            fd_width: 0.04,
            fd_levels: 3,
            fd_steps: 512,
            samples: 5,
            t_map_points: 20,
            quadrature_orders: vec![2, 4, 8, 16],
            gauge_steps: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActionConfig {
    pub n_samples: usize,
    pub s_grid: Vec<f64>,
    pub steps: usize,
    /// Below this many accepted loops per grid point the run is inconclusive.
    pub min_samples: usize,
    /// Inconclusive when `stderr / |rhs|` exceeds this.
    pub max_relative_stderr: f64,
    /// Connections rerun with the factor `D - 1` in front of the loop side.
    pub wrong_dimension: Vec<String>,
}

impl Default for ActionConfig {
    fn default() -> Self {
        ActionConfig {
            n_samples: 10_000,
            s_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            steps: 32,
            min_samples: 1000,
            max_relative_stderr: 0.25,
            wrong_dimension: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EomConfig {
    pub fd_step: f64,
    pub points: usize,
    pub paths: usize,
}

impl Default for EomConfig {
    fn default() -> Self {
        EomConfig {
            fd_step: 1e-3,
            points: 5,
            paths: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JacobianConfig {
    /// Names drawn from the built-in catalog and from `geometry`.
    pub catalog: Vec<String>,
    pub geometry: Vec<GeometrySpec>,
    pub sylvester_matrices: usize,
    pub area_samples: usize,
    pub coarea_schedule: Vec<f64>,
    pub coarea_samples: usize,
    pub relation_schedule: Vec<f64>,
    pub relation_samples: usize,
    pub delta_schedule: Vec<f64>,
    pub delta_samples: usize,
    pub graph_samples: usize,
}

impl Default for JacobianConfig {
    fn default() -> Self {
        JacobianConfig {
            catalog: default_catalog().into_iter().map(|g| g.name).collect(),
            geometry: Vec::new(),
            sylvester_matrices: 100,
            area_samples: 40_000,
            coarea_schedule: vec![1e-1, 1e-2, 1e-3],
            coarea_samples: 40_000,
            relation_schedule: vec![4e-4, 2e-4, 1e-4],
            relation_samples: 200_000,
            delta_schedule: vec![1e-1, 1e-2, 1e-3, 1e-4],
            delta_samples: 50_000,
            graph_samples: 100_000,
        }
    }
}

impl JacobianConfig {
    /// Resolves `catalog` against the built-in entries and `geometry`.
    pub fn geometries(&self) -> Result<Vec<Geometry>> {
        let builtin = default_catalog();
        self.catalog
            .iter()
            .map(|name| {
                let spec = self
                    .geometry
                    .iter()
                    .chain(&builtin)
                    .find(|g| &g.name == name)
                    .ok_or_else(|| LabError::config("jacobians.catalog", format!("unknown geometry `{name}`")))?;
                Geometry::from_spec(spec)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcmConfig {
    pub size: usize,
    pub n: usize,
    pub epsilon_schedule: Vec<f64>,
    pub n_samples: usize,
    pub proposal_width: f64,
    pub min_ess: f64,
    pub jacobian_size: usize,
    pub n_configs: usize,
    /// Step size of the random walk that grows test fields.
    pub coupling: f64,
    pub dof_sizes: Vec<usize>,
    pub dof_n: Vec<usize>,
    pub abelian_sizes: Vec<usize>,
    pub abelian_schedule: Vec<f64>,
}

impl Default for PcmConfig {
    fn default() -> Self {
        PcmConfig {
            size: 2,
            n: 2,
            epsilon_schedule: vec![2e-2, 1e-2, 5e-3],
            n_samples: 1_000_000,
            proposal_width: 0.6,
            min_ess: 1000.0,
            jacobian_size: 3,
            n_configs: 50,
            coupling: 0.6,
            dof_sizes: vec![2, 3, 4],
            dof_n: vec![2, 3],
            abelian_sizes: vec![2, 3],
            abelian_schedule: vec![1e-2, 5e-3, 2.5e-3],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// JSON-lines report file.
    pub path: Option<String>,
    /// Optional CSV summary table.
    pub csv: Option<String>,
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(LabError::config(field, format!("must be positive and finite, got {v}")))
    }
}

fn at_least(field: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(LabError::config(field, format!("must be at least {min}, got {v}")))
    }
}

fn schedule(field: &str, eps: &[f64]) -> Result<()> {
    if eps.is_empty() {
        return Err(LabError::config(field, "must not be empty"));
    }
    eps.iter().try_for_each(|&e| positive(field, e))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| format!("at byte {}", s.start)).unwrap_or_else(|| "document".into());
            LabError::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn default_config() -> RunConfig {
        Self::from_toml(DEFAULT_CONFIG).expect("committed default config is valid")
    }

    /// Threshold by name: the configured value, else the built-in default.
    pub fn tolerance(&self, name: &str) -> f64 {
        self.tolerances.get(name).copied().unwrap_or_else(|| {
            TOLERANCES
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, v)| *v)
                .unwrap_or_else(|| panic!("no tolerance named `{name}`"))
        })
    }

    /// Applies a `NAME=VALUE` override.
    pub fn set_tolerance(&mut self, assignment: &str) -> Result<()> {
        let (name, value) = assignment
            .split_once('=')
            .ok_or_else(|| LabError::config("--tolerance", format!("expected NAME=VALUE, got `{assignment}`")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| LabError::config(format!("tolerances.{name}"), format!("not a number: `{value}`")))?;
        let name = name.trim().to_string();
        let previous = self.tolerances.insert(name.clone(), value);
        let checked = self.validate();
        if checked.is_err() {
            match previous {
                Some(v) => self.tolerances.insert(name, v),
                None => self.tolerances.remove(&name),
            };
        }
        checked
    }

    pub fn connections(&self) -> Result<Vec<(String, ConnectionField)>> {
        self.connection_specs.iter().map(|c| Ok((c.name.clone(), c.build()?))).collect()
    }

    pub fn connection(&self, name: &str) -> Option<&ConnectionSpec> {
        self.connection_specs.iter().find(|c| c.name == name)
    }

    /// Schema checks. Tolerances may be zero, which forces failures; they
    /// may not be negative.
    pub fn validate(&self) -> Result<()> {
        if self.calibration_sign != MG_SIGN {
            return Err(LabError::config(
                "calibration_sign",
                format!("the transport convention is calibrated to {MG_SIGN}, got {}", self.calibration_sign),
            ));
        }
        for (name, &v) in &self.tolerances {
            let field = format!("tolerances.{name}");
            if !TOLERANCES.iter().any(|(n, _)| n == name) {
                return Err(LabError::config(field, "unknown tolerance"));
            }
            if !(v >= 0.0 && v.is_finite()) {
                return Err(LabError::config(field, format!("must be non-negative and finite, got {v}")));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for c in &self.connection_specs {
            if !names.insert(&c.name) {
                return Err(LabError::config(format!("connections.{}", c.name), "duplicate name"));
            }
            c.build()?;
        }
        for w in &self.action.wrong_dimension {
            match self.connection(w) {
                Some(c) if c.dim >= 2 => {}
                Some(_) => return Err(LabError::config("action.wrong_dimension", format!("`{w}` needs dim >= 2"))),
                None => return Err(LabError::config("action.wrong_dimension", format!("unknown connection `{w}`"))),
            }
        }
        positive("measure.epsilon", self.measure.epsilon)?;
        at_least("measure.cutoff", self.measure.cutoff, 2)?;

        let k = &self.kinematics;
        at_least("kinematics.transport_steps", k.transport_steps, 1)?;
        at_least("kinematics.fd_steps", k.fd_steps, 1)?;
        at_least("kinematics.fd_levels", k.fd_levels, 1)?;
        at_least("kinematics.samples", k.samples, 1)?;
        at_least("kinematics.t_map_points", k.t_map_points, 1)?;
        at_least("kinematics.gauge_steps", k.gauge_steps, 1)?;
        positive("kinematics.fd_h", k.fd_h)?;
        positive("kinematics.fd_width", k.fd_width)?;
        if k.fd_width >= 0.1 {
            return Err(LabError::config("kinematics.fd_width", "bump width must stay below 0.1"));
        }
        if k.quadrature_orders.is_empty() || k.quadrature_orders.contains(&0) {
            return Err(LabError::config("kinematics.quadrature_orders", "need at least one positive order"));
        }

        let a = &self.action;
        at_least("action.n_samples", a.n_samples, 1)?;
        at_least("action.steps", a.steps, 1)?;
        positive("action.max_relative_stderr", a.max_relative_stderr)?;
        if a.s_grid.is_empty() || a.s_grid.iter().any(|&s| !(s > 0.0 && s < 1.0)) {
            return Err(LabError::config("action.s_grid", "grid points must lie in (0, 1)"));
        }

        positive("eom.fd_step", self.eom.fd_step)?;
        at_least("eom.points", self.eom.points, 1)?;
        at_least("eom.paths", self.eom.paths, 1)?;

        let j = &self.jacobians;
        schedule("jacobians.coarea_schedule", &j.coarea_schedule)?;
        schedule("jacobians.relation_schedule", &j.relation_schedule)?;
        schedule("jacobians.delta_schedule", &j.delta_schedule)?;
        for (f, v) in [
            ("jacobians.area_samples", j.area_samples),
            ("jacobians.coarea_samples", j.coarea_samples),
            ("jacobians.relation_samples", j.relation_samples),
            ("jacobians.delta_samples", j.delta_samples),
            ("jacobians.graph_samples", j.graph_samples),
        ] {
            at_least(f, v, 1)?;
        }
        j.geometries()?;

        let p = &self.pcm;
        at_least("pcm.size", p.size, 2)?;
        at_least("pcm.jacobian_size", p.jacobian_size, 2)?;
        at_least("pcm.n", p.n, 2)?;
        at_least("pcm.n_samples", p.n_samples, 1)?;
        at_least("pcm.n_configs", p.n_configs, 1)?;
        schedule("pcm.epsilon_schedule", &p.epsilon_schedule)?;
        schedule("pcm.abelian_schedule", &p.abelian_schedule)?;
        positive("pcm.proposal_width", p.proposal_width)?;
        positive("pcm.coupling", p.coupling)?;
        if p.dof_sizes.iter().any(|&l| l < 2) || p.abelian_sizes.iter().any(|&l| l < 2) {
            return Err(LabError::config("pcm.dof_sizes", "lattice sizes must be at least 2"));
        }
        if p.dof_n.iter().any(|&n| n < 2) {
            return Err(LabError::config("pcm.dof_n", "group rank must be at least 2"));
        }
        Ok(())
    }
}
