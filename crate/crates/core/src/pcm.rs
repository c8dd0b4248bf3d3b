//! Principal chiral model on an open L×L lattice: fields, flat links, the
//! Jacobians of the field → link change of variables and the two-sided
//! partition-function comparison.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::jacobians::RANK_THRESHOLD;
use crate::liealg::{
    exp_map, gaussian_algebra, haar_density_exp_coords, haar_sample, log_map_labeled, orthonormal_basis,
    AlgebraElement, GroupElement,
};
use crate::stats::{extrapolated_jackknife, jackknife, substream};
use crate::{LabError, Result};

/// Direction of a lattice link.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Axis {
    X,
    Y,
}

/// Open `L × L` lattice. Sites are `x + L y`; horizontal links come first,
/// `h(x, y) = x + (L-1) y`, then vertical ones, `v(x, y) = L(L-1) + x + L y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lattice {
    pub size: usize,
}

/// Spanning tree rooted at the pinned site.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpanningTree {
    /// All horizontal links plus the first column.
    RowsFirst,
    /// All vertical links plus the first row.
    ColumnsFirst,
}

impl Lattice {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(LabError::OutOfRange {
                name: "lattice size",
                value: size as f64,
                range: ">= 2".into(),
            });
        }
        Ok(Lattice { size })
    }

    pub fn n_sites(&self) -> usize {
        self.size * self.size
    }

    pub fn n_links(&self) -> usize {
        2 * self.size * (self.size - 1)
    }

    pub fn n_plaquettes(&self) -> usize {
        (self.size - 1) * (self.size - 1)
    }

    pub fn site(&self, x: usize, y: usize) -> usize {
        x + self.size * y
    }

    pub fn h(&self, x: usize, y: usize) -> usize {
        x + (self.size - 1) * y
    }

    pub fn v(&self, x: usize, y: usize) -> usize {
        self.size * (self.size - 1) + x + self.size * y
    }

    /// `(from, to)` sites of a link.
    pub fn endpoints(&self, link: usize) -> (usize, usize) {
        let l = self.size;
        let nh = l * (l - 1);
        if link < nh {
            let (x, y) = (link % (l - 1), link / (l - 1));
            (self.site(x, y), self.site(x + 1, y))
        } else {
            let k = link - nh;
            let (x, y) = (k % l, k / l);
            (self.site(x, y), self.site(x, y + 1))
        }
    }

    pub fn label(&self, link: usize) -> String {
        let (from, to) = self.endpoints(link);
        let axis = if to == from + 1 { Axis::X } else { Axis::Y };
        format!("({}, {}) {:?}", from % self.size, from / self.size, axis)
    }

    /// Links `[h(x,y), v(x+1,y), h(x,y+1), v(x,y)]` of plaquette `(x, y)`;
    /// the holonomy is `u₀ u₁ u₂⁻¹ u₃⁻¹`.
    pub fn plaquette(&self, p: usize) -> [usize; 4] {
        let (x, y) = (p % (self.size - 1), p / (self.size - 1));
        [self.h(x, y), self.v(x + 1, y), self.h(x, y + 1), self.v(x, y)]
    }

    pub fn tree_links(&self, tree: SpanningTree) -> Vec<usize> {
        let l = self.size;
        match tree {
            SpanningTree::RowsFirst => (0..l)
                .flat_map(|y| (0..l - 1).map(move |x| (x, y)))
                .map(|(x, y)| self.h(x, y))
                .chain((0..l - 1).map(|y| self.v(0, y)))
                .collect(),
            SpanningTree::ColumnsFirst => (0..l)
                .flat_map(|x| (0..l - 1).map(move |y| (x, y)))
                .map(|(x, y)| self.v(x, y))
                .chain((0..l - 1).map(|x| self.h(x, 0)))
                .collect(),
        }
    }

    /// Sites in an order where each one after the root is reached by a tree
    /// link from an earlier site, paired with that link.
    fn tree_walk(&self, tree: SpanningTree) -> Vec<(usize, usize)> {
        let l = self.size;
        let mut out = Vec::with_capacity(self.n_sites() - 1);
        match tree {
            SpanningTree::RowsFirst => {
                for y in 0..l {
                    if y > 0 {
                        out.push((self.site(0, y), self.v(0, y - 1)));
                    }
                    for x in 1..l {
                        out.push((self.site(x, y), self.h(x - 1, y)));
                    }
                }
            }
            SpanningTree::ColumnsFirst => {
                for x in 0..l {
                    if x > 0 {
                        out.push((self.site(x, 0), self.h(x - 1, 0)));
                    }
                    for y in 1..l {
                        out.push((self.site(x, y), self.v(x, y - 1)));
                    }
                }
            }
        }
        out
    }

    /// Lattice difference operator (links × free sites), the derivative of the
    /// abelian field → link map. The pinned site's column is dropped.
    pub fn difference_matrix(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n_links(), self.n_sites() - 1);
        for k in 0..self.n_links() {
            let (from, to) = self.endpoints(k);
            if to > 0 {
                d[(k, to - 1)] += 1.0;
            }
            if from > 0 {
                d[(k, from - 1)] -= 1.0;
            }
        }
        d
    }

    /// Lattice curl (plaquettes × links).
    pub fn curl_matrix(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.n_plaquettes(), self.n_links());
        for p in 0..self.n_plaquettes() {
            let q = self.plaquette(p);
            c[(p, q[0])] += 1.0;
            c[(p, q[1])] += 1.0;
            c[(p, q[2])] -= 1.0;
            c[(p, q[3])] -= 1.0;
        }
        c
    }
}

/// Group-valued field with site 0 pinned to the identity.
#[derive(Clone, Debug)]
pub struct LatticeField {
    pub lattice: Lattice,
    values: Vec<GroupElement>,
}

/// Principal-log algebra element on each link.
#[derive(Clone, Debug)]
pub struct LinkConfig {
    pub lattice: Lattice,
    links: Vec<AlgebraElement>,
}

/// Largest eigen-angle of `exp(X)`, i.e. the spectral radius of `X`.
fn eigen_angle(x: &AlgebraElement) -> f64 {
    let h = x.matrix() * num_complex::Complex64::new(0.0, -1.0);
    h.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

impl LatticeField {
    pub fn new(lattice: Lattice, values: Vec<GroupElement>) -> Result<Self> {
        if values.len() != lattice.n_sites() {
            return Err(LabError::DimensionMismatch {
                expected: lattice.n_sites(),
                got: values.len(),
            });
        }
        let n = values[0].n();
        if values[0].matrix() != GroupElement::identity(n).matrix() {
            return Err(LabError::NumericInput("pinned site must be the identity".into()));
        }
        Ok(LatticeField { lattice, values })
    }

    pub fn identity(lattice: Lattice, n: usize) -> Self {
        LatticeField {
            lattice,
            values: vec![GroupElement::identity(n); lattice.n_sites()],
        }
    }

    /// Independent Haar elements on every free site.
    pub fn haar<R: Rng + ?Sized>(lattice: Lattice, n: usize, rng: &mut R) -> Self {
        let mut values = vec![GroupElement::identity(n)];
        values.extend((1..lattice.n_sites()).map(|_| haar_sample(n, rng)));
        LatticeField { lattice, values }
    }

    /// `φ(x, y) = exp(θ x T)`.
    pub fn abelian_gradient(lattice: Lattice, theta: f64, t: &AlgebraElement) -> Result<Self> {
        let values = (0..lattice.n_sites())
            .map(|s| exp_map(&t.scale(theta * (s % lattice.size) as f64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(LatticeField { lattice, values })
    }

    /// Field grown along the rows-first tree with link increments
    /// `exp(coupling · G)`, `G` standard Gaussian in the algebra. An increment
    /// outside the principal-log domain is a log-branch error on that link.
    pub fn random_walk<R: Rng + ?Sized>(lattice: Lattice, n: usize, coupling: f64, rng: &mut R) -> Result<Self> {
        let basis = orthonormal_basis(n);
        let mut values = vec![GroupElement::identity(n); lattice.n_sites()];
        for (site, link) in lattice.tree_walk(SpanningTree::RowsFirst) {
            let step = gaussian_algebra(&basis, coupling, rng);
            let angle = eigen_angle(&step);
            if angle >= PI - 1e-9 {
                return Err(LabError::LogBranch {
                    link: lattice.label(link),
                    angle,
                });
            }
            let (from, _) = lattice.endpoints(link);
            values[site] = values[from].mul(&exp_map(&step)?);
        }
        Ok(LatticeField { lattice, values })
    }

    pub fn n(&self) -> usize {
        self.values[0].n()
    }

    pub fn values(&self) -> &[GroupElement] {
        &self.values
    }

    pub fn link_element(&self, link: usize) -> GroupElement {
        let (from, to) = self.lattice.endpoints(link);
        self.values[from].inverse().mul(&self.values[to])
    }

    /// Largest site-wise Frobenius distance to another field.
    pub fn distance(&self, other: &LatticeField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a.matrix() - b.matrix()).norm())
            .fold(0.0, f64::max)
    }
}

impl LinkConfig {
    pub fn new(lattice: Lattice, links: Vec<AlgebraElement>) -> Result<Self> {
        if links.len() != lattice.n_links() {
            return Err(LabError::DimensionMismatch {
                expected: lattice.n_links(),
                got: links.len(),
            });
        }
        if links.iter().any(|x| !x.is_finite()) {
            return Err(LabError::NumericInput("non-finite link".into()));
        }
        Ok(LinkConfig { lattice, links })
    }

    pub fn zero(lattice: Lattice, n: usize) -> Self {
        LinkConfig {
            lattice,
            links: vec![AlgebraElement::zero(n); lattice.n_links()],
        }
    }

    /// Independent Gaussian links, generically far from flat.
    pub fn random<R: Rng + ?Sized>(lattice: Lattice, n: usize, scale: f64, rng: &mut R) -> Self {
        let basis = orthonormal_basis(n);
        LinkConfig {
            lattice,
            links: (0..lattice.n_links()).map(|_| gaussian_algebra(&basis, scale, rng)).collect(),
        }
    }

    pub fn links(&self) -> &[AlgebraElement] {
        &self.links
    }

    pub fn n(&self) -> usize {
        self.links[0].n()
    }

    pub fn group_links(&self) -> Result<Vec<GroupElement>> {
        self.links.iter().map(exp_map).collect()
    }
}

/// `X = log(φ_x⁻¹ φ_{x+μ})` on every link.
pub fn links_from_field(phi: &LatticeField) -> Result<LinkConfig> {
    let lat = phi.lattice;
    let links = (0..lat.n_links())
        .map(|k| log_map_labeled(&phi.link_element(k), &lat.label(k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LinkConfig { lattice: lat, links })
}

fn plaquette_holonomy(lat: &Lattice, u: &[GroupElement], p: usize) -> GroupElement {
    let [a, b, c, d] = lat.plaquette(p);
    u[a].mul(&u[b]).mul(&u[c].inverse()).mul(&u[d].inverse())
}

fn max_plaquette_defect(lat: &Lattice, u: &[GroupElement]) -> f64 {
    (0..lat.n_plaquettes())
        .map(|p| plaquette_holonomy(lat, u, p).frobenius_distance_to_identity())
        .fold(0.0, f64::max)
}

/// `max_p ‖u₁u₂u₃⁻¹u₄⁻¹ - I‖` over plaquettes, with `u = exp(X)`.
pub fn plaquette_residual(x: &LinkConfig) -> Result<f64> {
    Ok(max_plaquette_defect(&x.lattice, &x.group_links()?))
}

/// Integrates `φ` along `tree` from the pinned site. The input must be flat
/// and every off-tree link must then agree with the reconstructed field.
pub fn field_from_links(x: &LinkConfig, tree: SpanningTree) -> Result<LatticeField> {
    let lat = x.lattice;
    let u = x.group_links()?;
    let residual = max_plaquette_defect(&lat, &u);
    if residual >= 1e-8 {
        return Err(LabError::ConstraintViolation { residual });
    }
    let n = x.n();
    let mut values = vec![GroupElement::identity(n); lat.n_sites()];
    for (site, link) in lat.tree_walk(tree) {
        let (from, _) = lat.endpoints(link);
        values[site] = values[from].mul(&u[link]);
    }
    let field = LatticeField { lattice: lat, values };
    let mismatch = (0..lat.n_links())
        .map(|k| (field.link_element(k).matrix() - u[k].matrix()).norm())
        .fold(0.0, f64::max);
    if mismatch >= 1e-8 {
        return Err(LabError::ConstraintViolation { residual: mismatch });
    }
    Ok(field)
}

/// `Σ_links -Tr(X²)`.
pub fn pcm_action(x: &LinkConfig) -> f64 {
    x.links.iter().map(AlgebraElement::norm_sq).sum()
}

pub fn field_action(phi: &LatticeField) -> Result<f64> {
    Ok(pcm_action(&links_from_field(phi)?))
}

/// Degree-of-freedom count for the open lattice.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DofAudit {
    pub size: usize,
    pub n: usize,
    pub link_dof: usize,
    pub constraint_dof: usize,
    pub field_dof: usize,
    pub holds: bool,
}

pub fn dof_audit(size: usize, n: usize) -> DofAudit {
    let dim = n * n - 1;
    let link_dof = 2 * size * (size - 1) * dim;
    let constraint_dof = (size - 1) * (size - 1) * dim;
    let field_dof = (size * size - 1) * dim;
    DofAudit {
        size,
        n,
        link_dof,
        constraint_dof,
        field_dof,
        holds: link_dof - constraint_dof == field_dof,
    }
}

const FD_STEP: f64 = 1e-4;

/// Derivative of `φ → links` at `phi`. Columns are left perturbations
/// `φ_x → exp(t T_a) φ_x` of the free sites. Rows are link coordinates, in
/// the frame `u⁻¹δu` when `invariant`, else in the flat logarithm `δX`.
pub fn field_derivative(phi: &LatticeField, invariant: bool) -> Result<DMatrix<f64>> {
    let lat = phi.lattice;
    let basis = orthonormal_basis(phi.n());
    let dim = basis.len();
    let base: Vec<GroupElement> = (0..lat.n_links()).map(|k| phi.link_element(k)).collect();
    let mut d = DMatrix::zeros(lat.n_links() * dim, (lat.n_sites() - 1) * dim);
    for site in 1..lat.n_sites() {
        for (a, t) in basis.iter().enumerate() {
            let col = (site - 1) * dim + a;
            let mut shifted = [phi.clone(), phi.clone()];
            for (s, sign) in shifted.iter_mut().zip([1.0, -1.0]) {
                s.values[site] = exp_map(&t.scale(sign * FD_STEP))?.mul(&s.values[site]);
            }
            for k in 0..lat.n_links() {
                let (from, to) = lat.endpoints(k);
                if from != site && to != site {
                    continue;
                }
                let ends: Vec<AlgebraElement> = shifted
                    .iter()
                    .map(|s| {
                        let u = s.link_element(k);
                        if invariant {
                            log_map_labeled(&base[k].inverse().mul(&u), &lat.label(k))
                        } else {
                            log_map_labeled(&u, &lat.label(k))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                let diff = (&ends[0] - &ends[1]).scale(0.5 / FD_STEP);
                for (b, c) in diff.coeffs(&basis).into_iter().enumerate() {
                    d[(k * dim + b, col)] = c;
                }
            }
        }
    }
    Ok(d)
}

/// Derivative of the plaquette defects `log P` with respect to right link
/// perturbations `u → u exp(t T_a)`, in the frame `P₀⁻¹δP`.
pub fn constraint_derivative(u: &[GroupElement], lat: &Lattice) -> Result<DMatrix<f64>> {
    let n = u[0].n();
    let basis = orthonormal_basis(n);
    let dim = basis.len();
    let base: Vec<GroupElement> = (0..lat.n_plaquettes()).map(|p| plaquette_holonomy(lat, u, p)).collect();
    let mut d = DMatrix::zeros(lat.n_plaquettes() * dim, lat.n_links() * dim);
    for k in 0..lat.n_links() {
        for (a, t) in basis.iter().enumerate() {
            let col = k * dim + a;
            let mut ends = Vec::with_capacity(2);
            for sign in [1.0, -1.0] {
                let mut w = u.to_vec();
                w[k] = w[k].mul(&exp_map(&t.scale(sign * FD_STEP))?);
                ends.push(w);
            }
            for p in 0..lat.n_plaquettes() {
                if !lat.plaquette(p).contains(&k) {
                    continue;
                }
                let logs = ends
                    .iter()
                    .map(|w| log_map_labeled(&base[p].inverse().mul(&plaquette_holonomy(lat, w, p)), "plaquette"))
                    .collect::<Result<Vec<_>>>()?;
                let diff = (&logs[0] - &logs[1]).scale(0.5 / FD_STEP);
                for (b, c) in diff.coeffs(&basis).into_iter().enumerate() {
                    d[(p * dim + b, col)] = c;
                }
            }
        }
    }
    Ok(d)
}

/// Product of the nonzero singular values and the numerical rank.
pub fn singular_product(m: &DMatrix<f64>) -> (f64, usize) {
    let s = m.singular_values();
    let smax = s.iter().fold(0.0f64, |a, &v| a.max(v));
    let kept: Vec<f64> = s.iter().copied().filter(|&v| v > RANK_THRESHOLD * smax && v > 0.0).collect();
    (kept.iter().product(), kept.len())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// `(max - min) / mean`.
    pub relative: f64,
}

impl Spread {
    fn of(xs: &[f64]) -> Spread {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Spread {
            mean,
            min,
            max,
            relative: (max - min) / mean.abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JacobianReport {
    pub size: usize,
    pub n: usize,
    pub n_configs: usize,
    /// `Jg` in invariant frames at the identity field.
    pub jg_identity: f64,
    pub jg: Spread,
    pub jh: Spread,
    /// `Jg` with flat logarithm coordinates on links, for contrast.
    pub jg_flat: Spread,
    pub rank: usize,
    pub expected_rank: usize,
    pub dof: DofAudit,
}

/// `Jg` of the field → link map and `Jh` of the flatness constraint, in
/// invariant frames, across random fields grown with the given coupling.
pub fn jacobian_constancy(size: usize, n: usize, n_configs: usize, coupling: f64, seed: u64) -> Result<JacobianReport> {
    let lat = Lattice::new(size)?;
    let dof = dof_audit(size, n);
    let eval = |phi: &LatticeField| -> Result<(f64, f64, f64, usize)> {
        let (jg, rank) = singular_product(&field_derivative(phi, true)?);
        if rank != dof.field_dof {
            return Err(LabError::RankCollapse(format!(
                "field derivative has rank {rank}, expected {}",
                dof.field_dof
            )));
        }
        let (jg_flat, _) = singular_product(&field_derivative(phi, false)?);
        let u: Vec<GroupElement> = (0..lat.n_links()).map(|k| phi.link_element(k)).collect();
        let (jh, rank_h) = singular_product(&constraint_derivative(&u, &lat)?);
        if rank_h != dof.constraint_dof {
            return Err(LabError::RankCollapse(format!(
                "constraint derivative has rank {rank_h}, expected {}",
                dof.constraint_dof
            )));
        }
        Ok((jg, jh, jg_flat, rank))
    };
    let (jg_identity, _, _, _) = eval(&LatticeField::identity(lat, n))?;
    let fields = (0..n_configs)
        .map(|c| LatticeField::random_walk(lat, n, coupling, &mut substream(seed, c as u64)))
        .collect::<Result<Vec<_>>>()?;
    let vals = fields.par_iter().map(eval).collect::<Result<Vec<_>>>()?;
    let pick = |f: fn(&(f64, f64, f64, usize)) -> f64| Spread::of(&vals.iter().map(f).collect::<Vec<_>>());
    Ok(JacobianReport {
        size,
        n,
        n_configs,
        jg_identity,
        jg: pick(|v| v.0),
        jh: pick(|v| v.1),
        jg_flat: pick(|v| v.2),
        rank: vals.first().map_or(dof.field_dof, |v| v.3),
        expected_rank: dof.field_dof,
        dof,
    })
}

/// Observables of the two-sided comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Unit,
    Action,
    /// `Re Tr` of the link leaving the pinned site along x.
    LinkTrace,
    /// `Re Tr` of the first plaquette holonomy.
    PlaquetteTrace,
}

impl Observable {
    pub const ALL: [Observable; 4] = [
        Observable::Unit,
        Observable::Action,
        Observable::LinkTrace,
        Observable::PlaquetteTrace,
    ];

    fn eval(self, lat: &Lattice, x: &[AlgebraElement], u: &[GroupElement]) -> f64 {
        match self {
            Observable::Unit => 1.0,
            Observable::Action => x.iter().map(AlgebraElement::norm_sq).sum(),
            Observable::LinkTrace => u[lat.h(0, 0)].trace().re,
            Observable::PlaquetteTrace => plaquette_holonomy(lat, u, 0).trace().re,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObservableRatio {
    pub observable: Observable,
    pub value: f64,
    pub stderr: f64,
    /// Deviation from 1 in units of `stderr`.
    pub z: f64,
}

impl ObservableRatio {
    fn new(observable: Observable, (value, stderr): (f64, f64)) -> Self {
        let diff = value - 1.0;
        ObservableRatio {
            observable,
            value,
            stderr,
            z: if diff == 0.0 { 0.0 } else { diff.abs() / stderr.hypot(1e-12) },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwoSidedOptions {
    /// Width of the Gaussian tree-link proposal in algebra coordinates.
    pub proposal_width: f64,
    /// Effective sample size below which the run is inconclusive.
    pub min_ess: f64,
}

impl Default for TwoSidedOptions {
    fn default() -> Self {
        TwoSidedOptions {
            proposal_width: 0.6,
            min_ess: 1000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwoSidedLevel {
    pub eps: f64,
    /// `lhs_1 / rhs_1`, the proportionality constant.
    pub constant: (f64, f64),
    /// `(lhs_O / rhs_O) / (lhs_1 / rhs_1)`.
    pub normalized: Vec<ObservableRatio>,
    pub ess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwoSidedReport {
    pub size: usize,
    pub n: usize,
    pub n_samples: usize,
    pub lhs_ess: f64,
    pub levels: Vec<TwoSidedLevel>,
    /// Extrapolated to ε = 0; stderr includes the truncation estimate. With
    /// Haar probability measures on both sides the constant is 1.
    pub constant: ObservableRatio,
    pub extrapolated: Vec<ObservableRatio>,
    pub inconclusive: bool,
    pub pass: bool,
}

/// The rhs sample: tree links Haar, plaquette defects `d_p`, off-tree links
/// `v(x+1,y) = h(x,y)⁻¹ exp(d) v(x,y) h(x,y+1)` so that `P = exp(d)` exactly.
fn solve_off_tree(lat: &Lattice, tree: &[(usize, GroupElement)], defects: &[GroupElement]) -> Vec<GroupElement> {
    let l = lat.size;
    let n = defects.first().map_or(tree[0].1.n(), GroupElement::n);
    let mut u = vec![GroupElement::identity(n); lat.n_links()];
    for (k, g) in tree {
        u[*k] = g.clone();
    }
    for x in 0..l - 1 {
        for y in 0..l - 1 {
            let p = x + (l - 1) * y;
            u[lat.v(x + 1, y)] = u[lat.h(x, y)]
                .inverse()
                .mul(&defects[p])
                .mul(&u[lat.v(x, y)])
                .mul(&u[lat.h(x, y + 1)]);
        }
    }
    u
}

/// Tree links drawn as `exp(Y)`, `Y ~ N(0, σ²)` per coordinate, returned with
/// the weight `Π j(Y)/N(Y)` that turns them into Haar samples. Draws outside
/// the principal-log ball get weight 0, which leaves the estimator unbiased
/// because every element has exactly one preimage inside the ball.
fn tree_proposal<R: Rng + ?Sized>(
    tree: &[usize],
    basis: &[AlgebraElement],
    sigma: f64,
    rng: &mut R,
) -> Result<(Vec<(usize, GroupElement)>, f64)> {
    let dim = basis.len() as f64;
    let mut links = Vec::with_capacity(tree.len());
    let mut log_w = 0.0;
    let mut inside = true;
    for &k in tree {
        let y = gaussian_algebra(basis, sigma, rng);
        if eigen_angle(&y) >= PI - 1e-9 {
            inside = false;
        }
        let log_normal = -0.5 * dim * (2.0 * PI * sigma * sigma).ln() - y.norm_sq() / (2.0 * sigma * sigma);
        log_w += haar_density_exp_coords(&y, basis).ln() - log_normal;
        links.push((k, exp_map(&y)?));
    }
    Ok((links, if inside { log_w.exp() } else { 0.0 }))
}

fn ess(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

/// Field side `∫ Π dHaar(φ) e^{-S} O` against link side
/// `∫ Π dHaar(u) e^{-S} δ_ε(log P) O`.
///
/// Both sides draw tree links from [`tree_proposal`] on independent streams.
/// On the field side they build `φ` by a walk from the pinned site, which
/// maps Haar tree links to Haar fields. On the link side the defects come
/// from `δ_ε`, weighted by the Haar density of `exp(d)`, and fix the
/// off-tree links. The same tree links and standard normals serve every ε.
pub fn two_sided_compare(
    size: usize,
    n: usize,
    eps_schedule: &[f64],
    n_samples: usize,
    seed: u64,
    opts: &TwoSidedOptions,
) -> Result<TwoSidedReport> {
    let lat = Lattice::new(size)?;
    if eps_schedule.is_empty() || eps_schedule.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(LabError::config("pcm.epsilon_schedule", "need positive ε values"));
    }
    const GROUPS: usize = 32;
    let basis = orthonormal_basis(n);
    let dim = basis.len();
    let per = n_samples.div_ceil(GROUPS).max(1);
    let tree: Vec<usize> = lat.tree_links(SpanningTree::RowsFirst);
    let obs = Observable::ALL;
    let no = obs.len();
    let rows: Vec<Vec<Vec<f64>>> = (0..GROUPS)
        .into_par_iter()
        .map(|g| -> Result<Vec<Vec<f64>>> {
            let mut field_rng = substream(seed, 2 * g as u64);
            let mut link_rng = substream(seed, 2 * g as u64 + 1);
            let mut out = Vec::with_capacity(per);
            for _ in 0..per {
                let mut row = Vec::with_capacity(no * (1 + eps_schedule.len()));
                let (walk, w_field) = tree_proposal(&tree, &basis, opts.proposal_width, &mut field_rng)?;
                if w_field == 0.0 {
                    row.extend(obs.iter().map(|_| 0.0));
                } else {
                    let mut values = vec![GroupElement::identity(n); lat.n_sites()];
                    let by_link: std::collections::HashMap<usize, &GroupElement> =
                        walk.iter().map(|(k, g)| (*k, g)).collect();
                    for (site, link) in lat.tree_walk(SpanningTree::RowsFirst) {
                        let (from, _) = lat.endpoints(link);
                        values[site] = values[from].mul(by_link[&link]);
                    }
                    let x = links_from_field(&LatticeField { lattice: lat, values })?;
                    let u = x.group_links()?;
                    let w = w_field * (-pcm_action(&x)).exp();
                    row.extend(obs.iter().map(|o| w * o.eval(&lat, &x.links, &u)));
                }

                let (tree_u, w_tree) = tree_proposal(&tree, &basis, opts.proposal_width, &mut link_rng)?;
                let z: Vec<Vec<f64>> = (0..lat.n_plaquettes())
                    .map(|_| (0..dim).map(|_| link_rng.sample(StandardNormal)).collect())
                    .collect();
                for &eps in eps_schedule {
                    if w_tree == 0.0 {
                        row.extend(obs.iter().map(|_| 0.0));
                        continue;
                    }
                    let s = (eps / 2.0).sqrt();
                    let d: Vec<AlgebraElement> = z
                        .iter()
                        .map(|zp| AlgebraElement::from_coeffs(&basis, &zp.iter().map(|v| s * v).collect::<Vec<_>>()))
                        .collect();
                    let jac: f64 = d.iter().map(|dp| haar_density_exp_coords(dp, &basis)).product();
                    let defects = d.iter().map(exp_map).collect::<Result<Vec<_>>>()?;
                    let uu = solve_off_tree(&lat, &tree_u, &defects);
                    let xx = uu
                        .iter()
                        .enumerate()
                        .map(|(k, g)| log_map_labeled(g, &lat.label(k)))
                        .collect::<Result<Vec<_>>>()?;
                    let w = w_tree * jac * (-xx.iter().map(AlgebraElement::norm_sq).sum::<f64>()).exp();
                    row.extend(obs.iter().map(|o| w * o.eval(&lat, &xx, &uu)));
                }
                out.push(row);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let width = no * (1 + eps_schedule.len());
    let mut cols = vec![Vec::with_capacity(per * GROUPS); width];
    for row in rows.iter().flatten() {
        for (c, v) in cols.iter_mut().zip(row) {
            c.push(*v);
        }
    }
    let lhs_ess = ess(&cols[0]);
    let mut levels = Vec::new();
    for (k, &eps) in eps_schedule.iter().enumerate() {
        let off = no * (1 + k);
        let constant = jackknife(&[cols[0].clone(), cols[off].clone()], GROUPS, |m| m[0] / m[1]);
        let normalized = (1..no)
            .map(|o| {
                let pick = [cols[0].clone(), cols[o].clone(), cols[off].clone(), cols[off + o].clone()];
                ObservableRatio::new(obs[o], jackknife(&pick, GROUPS, |m| (m[1] / m[3]) / (m[0] / m[2])))
            })
            .collect();
        levels.push(TwoSidedLevel {
            eps,
            constant,
            normalized,
            ess: ess(&cols[off]),
        });
    }
    let constant = extrapolated_jackknife(GROUPS, eps_schedule, &cols, |m| {
        (0..eps_schedule.len()).map(|k| m[0] / m[no * (1 + k)]).collect()
    });
    let extrapolated: Vec<ObservableRatio> = (1..no)
        .map(|o| {
            let est = extrapolated_jackknife(GROUPS, eps_schedule, &cols, |m| {
                (0..eps_schedule.len())
                    .map(|k| {
                        let off = no * (1 + k);
                        (m[o] / m[off + o]) / (m[0] / m[off])
                    })
                    .collect()
            });
            ObservableRatio::new(obs[o], est)
        })
        .collect();
    let inconclusive = lhs_ess < opts.min_ess || levels.iter().any(|l| l.ess < opts.min_ess);
    let constant = ObservableRatio::new(Observable::Unit, constant);
    let pass = !inconclusive && constant.z <= 3.0 && extrapolated.iter().all(|r| r.z <= 3.0);
    Ok(TwoSidedReport {
        size,
        n,
        n_samples: per * GROUPS,
        lhs_ess,
        levels,
        constant,
        extrapolated,
        inconclusive,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbelianLevel {
    pub eps: f64,
    pub ratio_closed: [f64; 2],
    pub ratio_numeric: [f64; 2],
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbelianReport {
    pub size: usize,
    pub levels: Vec<AbelianLevel>,
    /// `√det(CCᵀ) / √det(DᵀD)`.
    pub limit_closed: f64,
    /// Numeric ratios extrapolated to ε = 0, for `1` and the action.
    pub limit_numeric: [f64; 2],
    pub limit_error: f64,
    /// Largest deviation of the linearized lattice maps from `D` and `C`.
    pub operator_error: f64,
    pub max_error: f64,
    pub pass: bool,
}

fn gaussian_log_det(m: &DMatrix<f64>) -> Result<f64> {
    let ch = m
        .clone()
        .cholesky()
        .ok_or_else(|| LabError::RankCollapse("Gaussian form is not positive definite".into()))?;
    Ok(2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// One-generator truncation: `φ` and `X` real, `S = |X|²`, `X = Dφ`, defect
/// `CX`. The closed forms `π^{k/2}/√det(DᵀD)` for the field side and
/// `π^{(m-p)/2}/√det(εI + CCᵀ)` for the link side are compared with
/// Gaussian integrals over the rhs sampler's own coordinates (tree links and
/// defects), where `D` and `C` come from linearizing the SU(2) maps at the
/// identity.
pub fn abelian_truncation(size: usize, eps_schedule: &[f64], tolerance: f64) -> Result<AbelianReport> {
    let lat = Lattice::new(size)?;
    let (k, m, p) = (lat.n_sites() - 1, lat.n_links(), lat.n_plaquettes());
    let d = lat.difference_matrix();
    let c = lat.curl_matrix();

    // linearization of the SU(2) maps, generator 0 block
    let dim = 3;
    let dg = field_derivative(&LatticeField::identity(lat, 2), true)?;
    let ident = vec![GroupElement::identity(2); m];
    let dh = constraint_derivative(&ident, &lat)?;
    let d_num = DMatrix::from_fn(m, k, |i, j| dg[(i * dim, j * dim)]);
    let c_num = DMatrix::from_fn(p, m, |i, j| dh[(i * dim, j * dim)]);
    let operator_error = (&d_num - &d).amax().max((&c_num - &c).amax());

    // the rhs sampler's coordinates: tree links then defects
    let tree = lat.tree_links(SpanningTree::RowsFirst);
    let mut a = DMatrix::zeros(m, m);
    for col in 0..m {
        let mut x = vec![0.0; m];
        for (i, &t) in tree.iter().enumerate() {
            x[t] = if col == i { 1.0 } else { 0.0 };
        }
        let l = lat.size;
        for xx in 0..l - 1 {
            for y in 0..l - 1 {
                let pp = xx + (l - 1) * y;
                let dp = if col == tree.len() + pp { 1.0 } else { 0.0 };
                x[lat.v(xx + 1, y)] = -x[lat.h(xx, y)] + dp + x[lat.v(xx, y)] + x[lat.h(xx, y + 1)];
            }
        }
        a.set_column(col, &nalgebra::DVector::from_vec(x));
    }
    let ata = a.transpose() * &a;
    let dtd_num = d_num.transpose() * &d_num;
    let lhs_num = [
        (k as f64 / 2.0) * PI.ln() - 0.5 * gaussian_log_det(&dtd_num)?,
        (k as f64 / 2.0).ln(),
    ];
    let lhs_closed_log = (k as f64 / 2.0) * PI.ln() - 0.5 * gaussian_log_det(&(d.transpose() * &d))?;
    let cct = &c * c.transpose();
    let mut levels = Vec::new();
    let mut numeric_ratios: Vec<[f64; 2]> = Vec::new();
    for &eps in eps_schedule {
        let z_r_closed = ((m - p) as f64 / 2.0) * PI.ln() - 0.5 * gaussian_log_det(&(&cct + DMatrix::identity(p, p) * eps))?;
        let inv = (DMatrix::identity(m, m) + c.transpose() * &c / eps)
            .try_inverse()
            .ok_or_else(|| LabError::RankCollapse("I + CᵀC/ε".into()))?;
        let s_r_closed = 0.5 * inv.trace();
        let ratio_closed = [
            (lhs_closed_log - z_r_closed).exp(),
            (lhs_closed_log - z_r_closed).exp() * (k as f64 / 2.0) / s_r_closed,
        ];

        let mut q = ata.clone();
        for j in tree.len()..m {
            q[(j, j)] += 1.0 / eps;
        }
        let z_r_num = (m as f64 / 2.0) * PI.ln() - (p as f64 / 2.0) * (PI * eps).ln() - 0.5 * gaussian_log_det(&q)?;
        let qinv = q.try_inverse().ok_or_else(|| LabError::RankCollapse("tree-defect form".into()))?;
        let s_r_num = 0.5 * (&ata * qinv).trace();
        let ratio_numeric = [
            (lhs_num[0] - z_r_num).exp(),
            (lhs_num[0] - z_r_num).exp() * lhs_num[1].exp() / s_r_num,
        ];
        let relative_error = (0..2)
            .map(|i| (ratio_numeric[i] / ratio_closed[i] - 1.0).abs())
            .fold(0.0, f64::max);
        numeric_ratios.push(ratio_numeric);
        levels.push(AbelianLevel {
            eps,
            ratio_closed,
            ratio_numeric,
            relative_error,
        });
    }
    let limit_closed = (0.5 * gaussian_log_det(&cct)? - 0.5 * gaussian_log_det(&(d.transpose() * &d))?).exp();
    let limit_numeric = [0, 1].map(|i| {
        let ys: Vec<f64> = numeric_ratios.iter().map(|r| r[i]).collect();
        crate::extrap::extrapolate_to_zero(eps_schedule, &ys)
    });
    let limit_error = limit_numeric
        .iter()
        .map(|v| (v / limit_closed - 1.0).abs())
        .fold(0.0, f64::max);
    let max_error = levels
        .iter()
        .map(|l| l.relative_error)
        .fold(limit_error.max(operator_error), f64::max);
    Ok(AbelianReport {
        size,
        levels,
        limit_closed,
        limit_numeric,
        limit_error,
        operator_error,
        max_error,
        pass: max_error < tolerance,
    })
}
