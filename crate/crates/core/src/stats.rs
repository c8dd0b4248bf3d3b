//! Monte Carlo bookkeeping: seeded sub-streams, means, jackknife errors and
//! stratified box sampling (Latin hypercubes and shifted lattices).

use rand::{Rng, SeedableRng};

use crate::extrap::extrapolate_to_zero;
use rand_chacha::ChaCha8Rng;

/// Independent reproducible stream `stream` derived from `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Pairwise summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample mean and its standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let m = mean(xs);
    if n < 2 {
        return (m, f64::INFINITY);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

/// Delete-one-group jackknife of a statistic of column means.
///
/// `columns[c][i]` is observable `c` on sample `i`; samples are split into
/// `groups` contiguous blocks. Returns (full-sample estimate, stderr).
pub fn jackknife<F>(columns: &[Vec<f64>], groups: usize, stat: F) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = columns[0].len();
    let groups = groups.min(n).max(2);
    let bounds: Vec<usize> = (0..=groups).map(|g| g * n / groups).collect();
    let totals: Vec<f64> = columns.iter().map(|c| pairwise_sum(c)).collect();
    let block_sums: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| {
            (0..groups)
                .map(|g| pairwise_sum(&c[bounds[g]..bounds[g + 1]]))
                .collect()
        })
        .collect();
    let full_means: Vec<f64> = totals.iter().map(|t| t / n as f64).collect();
    let full = stat(&full_means);
    let mut leave_out = Vec::with_capacity(groups);
    for g in 0..groups {
        let m = n - (bounds[g + 1] - bounds[g]);
        let means: Vec<f64> = totals
            .iter()
            .zip(&block_sums)
            .map(|(t, b)| (t - b[g]) / m as f64)
            .collect();
        leave_out.push(stat(&means));
    }
    let avg = mean(&leave_out);
    let dev: Vec<f64> = leave_out.iter().map(|v| (v - avg) * (v - avg)).collect();
    let var = (groups - 1) as f64 / groups as f64 * pairwise_sum(&dev);
    (full, var.sqrt())
}

/// Extrapolation to ε = 0 of per-level statistics of column means. The
/// error combines the jackknife stderr with the shift caused by dropping the
/// largest ε, which estimates the truncated terms of the ε expansion.
pub fn extrapolated_jackknife<F>(groups: usize, eps: &[f64], cols: &[Vec<f64>], level_values: F) -> (f64, f64)
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let (value, se) = jackknife(cols, groups, |m| extrapolate_to_zero(eps, &level_values(m)));
    if eps.len() < 2 {
        return (value, se);
    }
    let largest = (0..eps.len()).max_by(|&a, &b| eps[a].total_cmp(&eps[b])).expect("non-empty");
    let keep: Vec<usize> = (0..eps.len()).filter(|&k| k != largest).collect();
    let sub_eps: Vec<f64> = keep.iter().map(|&k| eps[k]).collect();
    let means: Vec<f64> = cols.iter().map(|c| mean(c)).collect();
    let all = level_values(&means);
    let sub: Vec<f64> = keep.iter().map(|&k| all[k]).collect();
    let truncation = (extrapolate_to_zero(&sub_eps, &sub) - value).abs();
    (value, se.hypot(truncation))
}

/// Latin-hypercube points in `[lo, hi]` (one stratum per sample along every axis).
pub fn latin_hypercube<R: Rng + ?Sized>(
    lo: &[f64],
    hi: &[f64],
    n: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let d = lo.len();
    let mut pts = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..d {
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let width = (hi[k] - lo[k]) / n as f64;
        for (i, p) in pts.iter_mut().enumerate() {
            let u: f64 = rng.random();
            p[k] = lo[k] + (perm[i] as f64 + u) * width;
        }
    }
    pts
}

fn is_prime(n: usize) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| !n.is_multiple_of(d))
}

/// Smallest prime `>= n`.
pub fn next_prime(n: usize) -> usize {
    (n.max(2)..).find(|&p| is_prime(p)).expect("primes are unbounded")
}

/// Korobov generating vector `(1, a, a², ...) mod n` for a rank-1 lattice of
/// `n` points (`n` prime), picking `a` from a coarse candidate set by the P₂
/// figure of merit.
pub fn korobov_generator(n: usize, dim: usize) -> Vec<usize> {
    let powers = |a: usize| {
        let mut z = Vec::with_capacity(dim);
        let mut c = 1usize;
        for _ in 0..dim {
            z.push(c);
            c = c * a % n;
        }
        z
    };
    if dim <= 1 || n < 5 {
        return powers(1);
    }
    let b2 = |x: f64| x * x - x + 1.0 / 6.0;
    let merit = |z: &[usize]| {
        let twopi2 = 2.0 * std::f64::consts::PI * std::f64::consts::PI;
        let terms: Vec<f64> = (0..n)
            .map(|i| {
                z.iter()
                    .map(|&zj| 1.0 + twopi2 * b2((i * zj % n) as f64 / n as f64))
                    .product::<f64>()
            })
            .collect();
        pairwise_sum(&terms) / n as f64 - 1.0
    };
    let candidates = 96.min(n - 2);
    (0..candidates)
        .map(|k| 2 + k * (n - 3) / candidates)
        .map(powers)
        .min_by(|a, b| merit(a).total_cmp(&merit(b)))
        .expect("at least one candidate")
}

/// Randomly shifted rank-1 lattice in `[0,1]^d` with the baker's (tent)
/// transform. Each axis projection is stratified, and independent shifts
/// give independent unbiased estimates.
pub fn shifted_lattice<R: Rng + ?Sized>(generator: &[usize], n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let shift: Vec<f64> = generator.iter().map(|_| rng.random()).collect();
    (0..n)
        .map(|i| {
            generator
                .iter()
                .zip(&shift)
                .map(|(&z, s)| {
                    let x = ((i * z % n) as f64 / n as f64 + s).fract();
                    1.0 - (2.0 * x - 1.0).abs()
                })
                .collect()
        })
        .collect()
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Asymptotic p-value of the two-sample KS statistic.
pub fn ks_p_value(d: f64, n: usize, m: usize) -> f64 {
    let ne = (n * m) as f64 / (n + m) as f64;
    let lam = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lam * lam).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_lattice_is_stratified_and_accurate() {
        let n = next_prime(1000);
        assert_eq!(n, 1009);
        let z = korobov_generator(n, 3);
        let mut rng = substream(1, 0);
        let pts = shifted_lattice(&z, n, &mut rng);
        // smooth non-periodic integrand with mean 1
        let f = |p: &[f64]| p.iter().map(|x| 3.0 * x * x).product::<f64>();
        let est = pts.iter().map(|p| f(p)).sum::<f64>() / n as f64;
        assert!((est - 1.0).abs() < 1e-3, "{est}");
        for k in 0..3 {
            let nb = (n + 1) / 2;
            let mut bins = vec![0usize; nb];
            for p in &pts {
                bins[((p[k] * nb as f64) as usize).min(nb - 1)] += 1;
            }
            assert!(bins.iter().all(|&b| b <= 3), "axis {k}");
        }
    }

    #[test]
    fn jackknife_of_mean_matches_classic_stderr() {
        let mut rng = substream(3, 0);
        let xs: Vec<f64> = (0..3200).map(|_| rng.random::<f64>()).collect();
        let (m, se) = mean_stderr(&xs);
        let (jm, jse) = jackknife(&[xs.clone()], 3200, |c| c[0]);
        assert!((m - jm).abs() < 1e-14);
        assert!((se - jse).abs() / se < 1e-8);
    }

    #[test]
    fn substreams_differ_and_repeat() {
        let a: u64 = substream(1, 0).random();
        let b: u64 = substream(1, 1).random();
        let c: u64 = substream(1, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn latin_hypercube_hits_every_stratum() {
        let pts = latin_hypercube(&[0.0, -1.0], &[1.0, 1.0], 50, &mut substream(5, 0));
        for k in 0..2 {
            let mut seen = vec![false; 50];
            for p in &pts {
                let lo = [0.0, -1.0][k];
                let w = [1.0, 2.0][k] / 50.0;
                seen[((p[k] - lo) / w) as usize] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
    }
}
