//! Extrapolation to zero step: Richardson tables for halved steps and
//! polynomial extrapolation for arbitrary ones.

use crate::liealg::AlgebraElement;

/// Values that can be linearly combined.
pub trait LinearCombination: Clone {
    /// `a * self + b * other`.
    fn combine(&self, a: f64, other: &Self, b: f64) -> Self;
}

impl LinearCombination for f64 {
    fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        a * self + b * other
    }
}

impl LinearCombination for AlgebraElement {
    fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        let mut out = self.scale(a);
        out.axpy(b, other);
        out
    }
}

impl<T: LinearCombination> LinearCombination for Vec<T> {
    fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        self.iter()
            .zip(other)
            .map(|(x, y)| x.combine(a, y, b))
            .collect()
    }
}

/// Richardson table for values computed at steps `w, w/2, w/4, ...`, with the
/// error expansion containing the powers listed in `orders` (in order).
/// Returns the most extrapolated entry.
pub fn richardson<T: LinearCombination>(values: &[T], orders: &[u32]) -> T {
    assert!(!values.is_empty());
    let mut row: Vec<T> = values.to_vec();
    for &p in orders.iter().take(values.len() - 1) {
        let f = 2f64.powi(p as i32);
        row = row
            .windows(2)
            .map(|pair| pair[1].combine(f / (f - 1.0), &pair[0], -1.0 / (f - 1.0)))
            .collect();
    }
    row.swap_remove(0)
}

/// Value at 0 of the interpolating polynomial through `(xs[i], ys[i])`
/// (Neville's scheme), for step sequences that are not halvings.
pub fn extrapolate_to_zero(xs: &[f64], ys: &[f64]) -> f64 {
    assert!(!xs.is_empty() && xs.len() == ys.len());
    let mut p = ys.to_vec();
    let n = xs.len();
    for k in 1..n {
        for i in 0..n - k {
            p[i] = (xs[i + k] * p[i] - xs[i] * p[i + 1]) / (xs[i + k] - xs[i]);
        }
    }
    p[0]
}

/// Error expansion in even powers, as for symmetric smoothing kernels.
pub const EVEN_ORDERS: [u32; 4] = [2, 4, 6, 8];
/// Generic expansion in all integer powers.
pub const ALL_ORDERS: [u32; 4] = [1, 2, 3, 4];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neville_is_exact_on_polynomials() {
        let xs = [4e-4, 1e-4, 2e-4, 3e-3];
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 - 2.0 * x + 7.0 * x * x - 3.0 * x * x * x).collect();
        assert!((extrapolate_to_zero(&xs, &ys) - 1.5).abs() < 1e-12);
        assert_eq!(extrapolate_to_zero(&[0.3], &[2.0]), 2.0);
    }

    #[test]
    fn removes_polynomial_error_terms() {
        let f = |w: f64| 3.0 + 2.0 * w * w - 5.0 * w.powi(4);
        let vals: Vec<f64> = (0..3).map(|k| f(0.1 / 2f64.powi(k))).collect();
        assert!((richardson(&vals, &EVEN_ORDERS) - 3.0).abs() < 1e-14);
        let g = |w: f64| 1.0 + w - w * w;
        let vals: Vec<f64> = (0..3).map(|k| g(0.2 / 2f64.powi(k))).collect();
        assert!((richardson(&vals, &ALL_ORDERS) - 1.0).abs() < 1e-14);
    }
}
