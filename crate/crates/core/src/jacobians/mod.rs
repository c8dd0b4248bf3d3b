//! Finite-dimensional change-of-variables lab: Jacobians of parametrizations
//! and constraint maps, area/coarea checks, the proportionality relation, the
//! graph case and the delta-function normalization limit.

mod catalog;
mod checks;
mod poly;

pub use catalog::{chart_by_name, default_catalog, Chart, Geometry, GeometrySpec, SamplingChart};
pub use checks::{
    area_formula_check, coarea_check, delta_limit_check, gaussian_delta, graph_case_check, relation_check, AreaReport,
    CoareaCase, CoareaLevel, CoareaReport, DeltaLimitReport, GraphCase, GraphCasePoint, GraphCaseReport, GraphOptions,
    RatioEstimate, RelationLevel, RelationReport, GROUPS,
};
pub use poly::Poly;

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::{LabError, Result};

type MapFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type DerivFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Relative singular-value threshold below which a direction counts as null.
pub const RANK_THRESHOLD: f64 = 1e-10;

/// A differentiable map `R^n_in → R^n_out`.
#[derive(Clone)]
pub struct SmoothMap {
    n_in: usize,
    n_out: usize,
    f: MapFn,
    df: Option<DerivFn>,
    rank: Option<usize>,
    fd_step: f64,
}

impl std::fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothMap")
            .field("n_in", &self.n_in)
            .field("n_out", &self.n_out)
            .field("analytic_derivative", &self.df.is_some())
            .field("rank", &self.rank)
            .finish()
    }
}

impl SmoothMap {
    pub fn new<F>(n_in: usize, n_out: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        SmoothMap {
            n_in,
            n_out,
            f: Arc::new(f),
            df: None,
            rank: None,
            fd_step: 1e-6,
        }
    }

    pub fn with_derivative<D>(mut self, df: D) -> Self
    where
        D: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.df = Some(Arc::new(df));
        self
    }

    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = Some(rank);
        self
    }

    /// `z ↦ M z`.
    pub fn linear(m: DMatrix<f64>) -> Self {
        let (r, c) = m.shape();
        let mf = m.clone();
        SmoothMap::new(c, r, move |x| (&mf * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec())
            .with_derivative(move |_| m.clone())
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn declared_rank(&self) -> Option<usize> {
        self.rank
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_in {
            return Err(LabError::DimensionMismatch {
                expected: self.n_in,
                got: x.len(),
            });
        }
        let y = (self.f)(x);
        if y.len() != self.n_out || y.iter().any(|v| !v.is_finite()) {
            return Err(LabError::NumericInput(format!("map value at {x:?}")));
        }
        Ok(y)
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> Vec<f64> {
        (self.f)(x)
    }

    /// Analytic derivative when supplied, else central differences.
    pub fn derivative(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        match &self.df {
            Some(df) => {
                self.eval(x)?;
                Ok(df(x))
            }
            None => self.fd_derivative(x, self.fd_step),
        }
    }

    pub fn fd_derivative(&self, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
        self.eval(x)?;
        let mut d = DMatrix::zeros(self.n_out, self.n_in);
        let mut xp = x.to_vec();
        for j in 0..self.n_in {
            xp[j] = x[j] + h;
            let fp = (self.f)(&xp);
            xp[j] = x[j] - h;
            let fm = (self.f)(&xp);
            xp[j] = x[j];
            for i in 0..self.n_out {
                d[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        Ok(d)
    }

    /// `z ↦ O h(z)`.
    pub fn postcompose(&self, o: DMatrix<f64>) -> SmoothMap {
        let inner = self.clone();
        let oc = o.clone();
        let mut out = SmoothMap::new(self.n_in, o.nrows(), move |x| {
            (&oc * nalgebra::DVector::from_vec(inner.eval_unchecked(x))).as_slice().to_vec()
        });
        let inner = self.clone();
        out = out.with_derivative(move |x| &o * inner.derivative(x).expect("derivative of inner map"));
        out.rank = self.rank;
        out
    }

    /// `x ↦ g(O x)`.
    pub fn precompose(&self, o: DMatrix<f64>) -> SmoothMap {
        let inner = self.clone();
        let oc = o.clone();
        let mut out = SmoothMap::new(o.ncols(), self.n_out, move |x| {
            inner.eval_unchecked((&oc * nalgebra::DVector::from_column_slice(x)).as_slice())
        });
        let inner = self.clone();
        out = out.with_derivative(move |x| {
            let y = &o * nalgebra::DVector::from_column_slice(x);
            inner.derivative(y.as_slice()).expect("derivative of inner map") * &o
        });
        out.rank = self.rank;
        out
    }
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn numerical_rank(s: &[f64]) -> usize {
    let smax = s.first().copied().unwrap_or(0.0);
    s.iter().filter(|&&v| v > RANK_THRESHOLD * smax && v > 0.0).count()
}

/// `sqrt(det(DgᵀDg))` at `x`; `g` must be an immersion there.
pub fn jg(g: &SmoothMap, x: &[f64]) -> Result<f64> {
    let d = g.derivative(x)?;
    if g.n_in > g.n_out {
        return Err(LabError::ImmersionFailure { ratio: 0.0 });
    }
    let s = singular_values(&d);
    let smax = s[0];
    let smin = *s.last().unwrap_or(&0.0);
    if smax == 0.0 || smin <= RANK_THRESHOLD * smax {
        return Err(LabError::ImmersionFailure {
            ratio: if smax == 0.0 { 0.0 } else { smin / smax },
        });
    }
    Ok(s.iter().product())
}

/// Product of the nonzero singular values of `Dh` at `z`, with the rank
/// checked against the declared one.
pub fn jh(h: &SmoothMap, z: &[f64]) -> Result<f64> {
    let d = h.derivative(z)?;
    let s = singular_values(&d);
    let r = numerical_rank(&s);
    if let Some(decl) = h.rank {
        if decl != r {
            return Err(LabError::RankMismatch {
                declared: decl,
                observed: r,
            });
        }
    }
    Ok(s[..r].iter().product())
}

/// Volume of the parallelepiped spanned by the columns of `v`, via QR.
pub fn parallelepiped_volume(v: &DMatrix<f64>) -> f64 {
    if v.ncols() == 0 {
        return 1.0;
    }
    let r = v.clone().qr().r();
    (0..v.ncols()).map(|i| r[(i, i)].abs()).product()
}

/// Volume spanned by `Dg v_i` for an orthonormal basis `v` of the domain.
pub fn jg_parallelepiped(g: &SmoothMap, x: &[f64], basis: &DMatrix<f64>) -> Result<f64> {
    Ok(parallelepiped_volume(&(g.derivative(x)? * basis)))
}

/// Volume spanned by `Dh v_i` over an orthonormal basis of the orthogonal
/// complement of `ker Dh`, found from the eigenvectors of `DhᵀDh`.
pub fn jh_parallelepiped(h: &SmoothMap, z: &[f64]) -> Result<f64> {
    let d = h.derivative(z)?;
    let r = numerical_rank(&singular_values(&d));
    let eig = (d.transpose() * &d).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let basis = DMatrix::from_fn(d.ncols(), r, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(parallelepiped_volume(&(d * basis)))
}

/// Product of all singular values of `Dg`, with no rank decision. Used for
/// chart points known to be regular where `Dg` may be badly scaled.
pub(crate) fn volume_factor(g: &SmoothMap, x: &[f64]) -> Result<f64> {
    Ok(singular_values(&g.derivative(x)?).iter().product())
}

/// `(det(I + MᵀM), det(I + MMᵀ))`.
pub fn sylvester_sides(m: &DMatrix<f64>) -> (f64, f64) {
    let (r, c) = m.shape();
    let left = (DMatrix::identity(c, c) + m.transpose() * m).determinant();
    let right = (DMatrix::identity(r, r) + m * m.transpose()).determinant();
    (left, right)
}

/// Monte Carlo estimate of an integral.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct MCIntegralResult {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub domain: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn random_orthogonal(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        random_matrix(n, n, rng).qr().q()
    }

    #[test]
    fn jg_examples() {
        let mut rng = substream(1, 0);
        let q = random_orthogonal(3, &mut rng);
        let iso = SmoothMap::linear(q.columns(0, 2).into_owned());
        assert!((jg(&iso, &[0.3, 0.1]).unwrap() - 1.0).abs() < 1e-12);
        let parabola = SmoothMap::new(1, 2, |x| vec![x[0], x[0] * x[0]])
            .with_derivative(|x| DMatrix::from_column_slice(2, 1, &[1.0, 2.0 * x[0]]));
        assert!((jg(&parabola, &[1.0]).unwrap() - 5f64.sqrt()).abs() < 1e-14);
        let flat = SmoothMap::new(2, 3, |x| vec![x[0], x[0], 0.0 * x[1]]);
        assert!(matches!(jg(&flat, &[0.1, 0.2]), Err(LabError::ImmersionFailure { .. })));
    }

    #[test]
    fn jg_equals_parallelepiped_volume_on_random_maps() {
        let mut rng = substream(2, 0);
        for _ in 0..20 {
            let (a, b) = (random_matrix(5, 3, &mut rng), random_matrix(5, 3, &mut rng));
            let g = SmoothMap::new(3, 5, move |x| {
                let v = nalgebra::DVector::from_column_slice(x);
                let lin = &a * &v;
                let quad = &b * v.map(|c| c * c);
                (lin + 0.3 * quad).as_slice().to_vec()
            });
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v = random_orthogonal(3, &mut rng);
            let a1 = jg(&g, &x).unwrap();
            let a2 = jg_parallelepiped(&g, &x, &v).unwrap();
            assert!((a1 - a2).abs() < 1e-10 * a1.max(1.0));
            let o = random_orthogonal(3, &mut rng);
            let go = g.precompose(o.clone());
            let ox = (&o.transpose() * nalgebra::DVector::from_vec(x.clone())).as_slice().to_vec();
            assert!((jg(&go, &ox).unwrap() - a1).abs() < 1e-8 * a1.max(1.0));
        }
    }

    #[test]
    fn jh_examples_and_invariances() {
        let h = SmoothMap::new(2, 1, |z| vec![z[0] * z[0] + z[1] * z[1]])
            .with_derivative(|z| DMatrix::from_row_slice(1, 2, &[2.0 * z[0], 2.0 * z[1]]));
        assert!((jh(&h, &[1.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
        let padded = SmoothMap::new(2, 3, |z| vec![z[0] * z[0] + z[1] * z[1], 0.0, 0.0]).with_rank(1);
        assert!((jh(&padded, &[1.0, 0.0]).unwrap() - 2.0).abs() < 1e-9);
        let mut rng = substream(3, 0);
        for _ in 0..20 {
            let a = random_matrix(2, 4, &mut rng);
            let hm = SmoothMap::new(4, 2, move |z| {
                let v = nalgebra::DVector::from_column_slice(z);
                let s = v.map(|c| c.sin());
                (&a * s).as_slice().to_vec()
            })
            .with_rank(2);
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let o = random_orthogonal(2, &mut rng);
            let base = jh(&hm, &z).unwrap();
            assert!((jh(&hm.postcompose(o), &z).unwrap() - base).abs() < 1e-12 * base.max(1.0));
            assert!((jh_parallelepiped(&hm, &z).unwrap() - base).abs() < 1e-10 * base.max(1.0));
        }
        assert!(matches!(
            jh(&padded.clone().with_rank(2), &[1.0, 0.0]),
            Err(LabError::RankMismatch { declared: 2, observed: 1 })
        ));
    }

    #[test]
    fn sylvester_identity_random() {
        let mut rng = substream(4, 0);
        for k in 0..100 {
            let r = 1 + k % 8;
            let c = 1 + (k / 8) % 5;
            let m = random_matrix(r, c, &mut rng);
            let (a, b) = sylvester_sides(&m);
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{r}x{c}: {a} {b}");
        }
        let (a, b) = sylvester_sides(&DMatrix::zeros(3, 2));
        assert_eq!((a, b), (1.0, 1.0));
    }
}
