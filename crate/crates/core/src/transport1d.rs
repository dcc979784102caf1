//! Closed-form optimal transport between one-dimensional empirical measures.
//!
//! All measures carry uniform weights. Quantile functions use the midpoint
//! convention: the `m`-th smallest of `n` samples sits at level
//! `(m - 0.5) / n`, values between levels are linearly interpolated, and
//! levels outside the first/last midpoint clamp to the extreme samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("empty sample set")]
    Empty,
    #[error("non-finite sample value")]
    NonFinite,
    #[error("quantile level {0} outside (0, 1)")]
    Level(f64),
    #[error("order p = {0} must be >= 1")]
    Order(f64),
    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("assignment oracle limited to n <= {max}, got {n}")]
    TooLarge { n: usize, max: usize },
}

pub type Result<T> = std::result::Result<T, TransportError>;

/// Largest instance accepted by [`assignment_oracle`].
pub const ORACLE_MAX_N: usize = 10;

/// An unordered, non-empty multiset of finite reals with uniform weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples1D {
    values: Vec<f64>,
}

impl Samples1D {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(TransportError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TransportError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sorted(&self) -> Vec<f64> {
        argsort(&self.values)
            .into_iter()
            .map(|i| self.values[i])
            .collect()
    }
}

/// Stable ascending argsort; ties keep their original order.
pub fn argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

/// Empirical quantile function of a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFn {
    sorted_values: Vec<f64>,
}

impl QuantileFn {
    pub fn new(samples: &Samples1D) -> Self {
        Self {
            sorted_values: samples.sorted(),
        }
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted_values
    }

    /// Midpoint levels `(m - 0.5) / n`, `m = 1..=n`.
    pub fn levels(&self) -> Vec<f64> {
        let n = self.sorted_values.len() as f64;
        (0..self.sorted_values.len())
            .map(|m| (m as f64 + 0.5) / n)
            .collect()
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(TransportError::Level(u));
        }
        let s = &self.sorted_values;
        let n = s.len();
        let pos = u * n as f64 - 0.5;
        if pos <= 0.0 {
            return Ok(s[0]);
        }
        if pos >= (n - 1) as f64 {
            return Ok(s[n - 1]);
        }
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        if frac == 0.0 {
            return Ok(s[lo]);
        }
        Ok((1.0 - frac) * s[lo] + frac * s[lo + 1])
    }
}

pub fn quantile(q: &QuantileFn, u: f64) -> Result<f64> {
    q.quantile(u)
}

/// How a sample set of size `n` is mapped onto a reference of size `m != n`.
///
/// Both rules reproduce the sorted values exactly when `n == m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// Midpoint-level linear interpolation of the quantile function,
    /// evaluated at the reference levels `(m - 0.5) / M`.
    Midpoint,
    /// Barycentric projection of the monotone coupling: each reference atom
    /// maps to the average of the sample quantile function over its mass
    /// interval. With a single reference atom this is the sample mean.
    #[default]
    Barycentric,
}

/// Sparse weights `(sorted_source_index, weight)` for each of `n_ref` target
/// positions. Weights of every target sum to one.
pub fn interpolation_weights(
    n_src: usize,
    n_ref: usize,
    rule: Interpolation,
) -> Vec<Vec<(usize, f64)>> {
    assert!(n_src > 0 && n_ref > 0);
    if n_src == n_ref {
        return (0..n_src).map(|m| vec![(m, 1.0)]).collect();
    }
    match rule {
        Interpolation::Midpoint => midpoint_weights(n_src, n_ref),
        Interpolation::Barycentric => barycentric_weights(n_src, n_ref),
    }
}

fn midpoint_weights(n: usize, m_ref: usize) -> Vec<Vec<(usize, f64)>> {
    // Position of reference level (2m+1)/(2M) on the source index axis is
    // ((2m+1) n - M) / (2M); integer arithmetic keeps it exact.
    let den = 2 * m_ref as i64;
    let last = (n - 1) as i64;
    (0..m_ref)
        .map(|m| {
            let num = (2 * m as i64 + 1) * n as i64 - m_ref as i64;
            if num <= 0 {
                return vec![(0, 1.0)];
            }
            if num >= last * den {
                return vec![(n - 1, 1.0)];
            }
            let lo = (num / den) as usize;
            let rem = num % den;
            if rem == 0 {
                vec![(lo, 1.0)]
            } else {
                let frac = rem as f64 / den as f64;
                vec![(lo, 1.0 - frac), (lo + 1, frac)]
            }
        })
        .collect()
}

fn barycentric_weights(n: usize, m_ref: usize) -> Vec<Vec<(usize, f64)>> {
    // In units of 1/(n M): reference atom m covers [m n, (m+1) n),
    // source atom j covers [j M, (j+1) M).
    (0..m_ref)
        .map(|m| {
            let (lo, hi) = (m * n, (m + 1) * n);
            let first = lo / m_ref;
            let last = (hi - 1) / m_ref;
            (first..=last)
                .filter_map(|j| {
                    let overlap = hi.min((j + 1) * m_ref) - lo.max(j * m_ref);
                    (overlap > 0).then(|| (j, overlap as f64 / n as f64))
                })
                .collect()
        })
        .collect()
}

/// Monotone (north-west corner) coupling between sorted samples of sizes
/// `na` and `nb`: triples `(i, j, mass)` with total mass one. This is the
/// optimal plan for every convex ground cost in one dimension.
pub fn monotone_coupling(na: usize, nb: usize) -> Vec<(usize, usize, f64)> {
    assert!(na > 0 && nb > 0);
    if na == nb {
        let w = 1.0 / na as f64;
        return (0..na).map(|i| (i, i, w)).collect();
    }
    // Breakpoints in units of 1/(na nb): a's at multiples of nb, b's at
    // multiples of na.
    let total = na * nb;
    let mut out = Vec::with_capacity(na + nb);
    let (mut i, mut j, mut pos) = (0usize, 0usize, 0usize);
    while pos < total {
        let next = ((i + 1) * nb).min((j + 1) * na);
        out.push((i, j, (next - pos) as f64 / total as f64));
        pos = next;
        if pos == (i + 1) * nb {
            i += 1;
        }
        if pos == (j + 1) * na {
            j += 1;
        }
    }
    out
}

fn check_order(p: f64) -> Result<()> {
    if p < 1.0 || !p.is_finite() {
        return Err(TransportError::Order(p));
    }
    Ok(())
}

/// `W_p^p` between two sorted sample vectors.
pub(crate) fn wasserstein_pp_sorted(a: &[f64], b: &[f64], p: f64) -> f64 {
    if a.len() == b.len() {
        let n = a.len() as f64;
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs().powf(p))
            .sum::<f64>()
            / n
    } else {
        monotone_coupling(a.len(), b.len())
            .into_iter()
            .map(|(i, j, w)| w * (a[i] - b[j]).abs().powf(p))
            .sum()
    }
}

/// p-Wasserstein distance between two empirical measures on the line.
pub fn wasserstein_1d(a: &Samples1D, b: &Samples1D, p: f64) -> Result<f64> {
    check_order(p)?;
    let pp = wasserstein_pp_sorted(&a.sorted(), &b.sorted(), p);
    Ok(pp.powf(1.0 / p))
}

/// Image of each sorted reference sample under the monotone map, for
/// equal-size inputs.
pub fn monge_map_equal(a: &Samples1D, reference: &Samples1D) -> Result<Vec<f64>> {
    if a.len() != reference.len() {
        return Err(TransportError::SizeMismatch(a.len(), reference.len()));
    }
    Ok(a.sorted())
}

/// Midpoint-interpolated quantiles of `a` at the reference levels.
pub fn monge_map_interp(a: &Samples1D, reference: &Samples1D) -> Result<Vec<f64>> {
    monge_map_with(a, reference.len(), Interpolation::Midpoint)
}

pub(crate) fn apply_weights(sorted: &[f64], weights: &[Vec<(usize, f64)>]) -> Vec<f64> {
    weights
        .iter()
        .map(|ws| ws.iter().fold(0.0, |acc, &(j, w)| acc + w * sorted[j]))
        .collect()
}

/// Transport map of `a` evaluated at the `n_ref` sorted reference positions
/// under the given interpolation rule.
pub fn monge_map_with(a: &Samples1D, n_ref: usize, rule: Interpolation) -> Result<Vec<f64>> {
    if n_ref == 0 {
        return Err(TransportError::Empty);
    }
    let sorted = a.sorted();
    if sorted.len() == n_ref {
        return Ok(sorted);
    }
    Ok(apply_weights(
        &sorted,
        &interpolation_weights(sorted.len(), n_ref, rule),
    ))
}

/// Cumulative distribution transform: transport map minus the sorted
/// reference, using midpoint interpolation when sizes differ.
pub fn cdt(a: &Samples1D, reference: &Samples1D) -> Result<Vec<f64>> {
    cdt_with(a, reference, Interpolation::Midpoint)
}

pub fn cdt_with(a: &Samples1D, reference: &Samples1D, rule: Interpolation) -> Result<Vec<f64>> {
    let mapped = monge_map_with(a, reference.len(), rule)?;
    Ok(mapped
        .iter()
        .zip(reference.sorted())
        .map(|(t, r)| t - r)
        .collect())
}

/// Reference-weighted p-norm `((1/M) Σ |v_m|^p)^(1/p)`.
pub fn weighted_norm(v: &[f64], p: f64) -> f64 {
    let n = v.len() as f64;
    (v.iter().map(|x| x.abs().powf(p)).sum::<f64>() / n).powf(1.0 / p)
}

pub fn weighted_distance(u: &[f64], v: &[f64], p: f64) -> f64 {
    let n = u.len() as f64;
    (u.iter()
        .zip(v)
        .map(|(x, y)| (x - y).abs().powf(p))
        .sum::<f64>()
        / n)
        .powf(1.0 / p)
}

/// Exact minimum over all bijections of `((1/n) Σ |a_i - b_σ(i)|^p)^(1/p)`,
/// via the Hungarian algorithm. Independent of sorting; intended as a test
/// oracle for small instances.
pub fn assignment_oracle(a: &Samples1D, b: &Samples1D, p: f64) -> Result<f64> {
    check_order(p)?;
    let n = a.len();
    if n != b.len() {
        return Err(TransportError::SizeMismatch(n, b.len()));
    }
    if n > ORACLE_MAX_N {
        return Err(TransportError::TooLarge {
            n,
            max: ORACLE_MAX_N,
        });
    }
    let cost: Vec<Vec<f64>> = a
        .values()
        .iter()
        .map(|x| b.values().iter().map(|y| (x - y).abs().powf(p)).collect())
        .collect();
    let assignment = hungarian(&cost);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum();
    Ok((total / n as f64).powf(1.0 / p))
}

/// Minimum-cost perfect matching on a square cost matrix (shortest
/// augmenting paths with potentials). Returns the column for each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[row_of[j] - 1] = j - 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[f64]) -> Samples1D {
        Samples1D::new(v.to_vec()).unwrap()
    }

    /// Exhaustive minimum over all permutations (Heap's algorithm).
    fn brute_force(a: &[f64], b: &[f64], p: f64) -> f64 {
        let n = a.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let cost = |perm: &[usize]| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| (a[i] - b[j]).abs().powf(p))
                .sum::<f64>()
        };
        let mut best = cost(&perm);
        let mut c = vec![0; n];
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                best = best.min(cost(&perm));
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        (best / n as f64).powf(1.0 / p)
    }

    #[test]
    fn quantile_examples() {
        let q = QuantileFn::new(&s(&[1.0, 0.0]));
        assert_eq!(q.quantile(0.25).unwrap(), 0.0);
        assert_eq!(q.quantile(0.5).unwrap(), 0.5);
        assert_eq!(q.quantile(0.1).unwrap(), 0.0);
        assert_eq!(q.quantile(0.9).unwrap(), 1.0);
        let c = QuantileFn::new(&s(&[4.5]));
        for u in [0.01, 0.5, 0.99] {
            assert_eq!(c.quantile(u).unwrap(), 4.5);
        }
        assert_eq!(q.levels(), vec![0.25, 0.75]);
    }

    #[test]
    fn quantile_rejects_out_of_range_levels() {
        let q = QuantileFn::new(&s(&[0.0, 1.0]));
        for u in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(q.quantile(u).is_err());
        }
    }

    #[test]
    fn samples_reject_empty_and_non_finite() {
        assert_eq!(Samples1D::new(vec![]), Err(TransportError::Empty));
        assert_eq!(
            Samples1D::new(vec![1.0, f64::NAN]),
            Err(TransportError::NonFinite)
        );
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein_1d(&s(&[0.0]), &s(&[1.0]), 2.0).unwrap(), 1.0);
        let a = [1.0, 2.0, 3.0];
        let b = [2.0, 3.0, 4.0];
        let expected = brute_force(&a, &b, 1.0);
        assert_eq!(expected, 1.0);
        assert!((wasserstein_1d(&s(&a), &s(&b), 1.0).unwrap() - expected).abs() < 1e-15);
        let x = s(&[0.3, -1.2, 5.0, 0.3]);
        for p in [1.0, 1.5, 2.0, 3.0] {
            assert_eq!(wasserstein_1d(&x, &x, p).unwrap(), 0.0);
        }
        assert_eq!(wasserstein_1d(&x, &x, 0.5), Err(TransportError::Order(0.5)));
    }

    #[test]
    fn unequal_sizes_use_monotone_coupling() {
        // {0, 1} vs {0, 0.5, 1}: mass pieces 1/3 (0-0), 1/6 (0-0.5),
        // 1/6 (1-0.5), 1/3 (1-1), so W_1 = 1/6.
        let w = wasserstein_1d(&s(&[0.0, 1.0]), &s(&[0.0, 0.5, 1.0]), 1.0).unwrap();
        assert!((w - 1.0 / 6.0).abs() < 1e-15);
        // Duplicating every sample leaves the measure unchanged.
        let a = s(&[0.2, 1.7, -3.0]);
        let a2 = s(&[0.2, 1.7, -3.0, 0.2, 1.7, -3.0]);
        let b = s(&[5.0, 0.0, 1.0, 2.0]);
        let d1 = wasserstein_1d(&a, &b, 2.0).unwrap();
        let d2 = wasserstein_1d(&a2, &b, 2.0).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
        assert!(wasserstein_1d(&a, &a2, 2.0).unwrap() < 1e-12);
    }

    #[test]
    fn coupling_masses_sum_to_one() {
        for na in 1..9 {
            for nb in 1..9 {
                let c = monotone_coupling(na, nb);
                let total: f64 = c.iter().map(|t| t.2).sum();
                assert!((total - 1.0).abs() < 1e-14);
                let mut mass_a = vec![0.0; na];
                for &(i, _, w) in &c {
                    mass_a[i] += w;
                }
                assert!(mass_a.iter().all(|m| (m - 1.0 / na as f64).abs() < 1e-14));
            }
        }
    }

    #[test]
    fn monge_map_examples() {
        assert_eq!(
            monge_map_equal(&s(&[3.0, 1.0]), &s(&[0.0, 10.0])).unwrap(),
            vec![1.0, 3.0]
        );
        let r = s(&[2.0, -1.0, 0.5]);
        assert_eq!(monge_map_equal(&r, &r).unwrap(), r.sorted());
        assert_eq!(monge_map_equal(&s(&[5.0]), &s(&[2.0])).unwrap(), vec![5.0]);
        assert!(monge_map_equal(&s(&[1.0]), &s(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn monge_map_interp_examples() {
        // Quantile of {0, 1}: 0 up to level 0.25, linear to 1 at level 0.75.
        let hand = |u: f64| ((u - 0.25) / 0.5).clamp(0.0, 1.0);
        let expected: Vec<f64> = [0.125, 0.375, 0.625, 0.875]
            .iter()
            .map(|&u| hand(u))
            .collect();
        assert_eq!(expected, vec![0.0, 0.25, 0.75, 1.0]);
        let got = monge_map_interp(&s(&[0.0, 1.0]), &s(&[9.0; 4])).unwrap();
        assert_eq!(got, expected);

        let a = s(&[4.0, -2.0, 7.5, 0.0]);
        let r = s(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            monge_map_interp(&a, &r).unwrap(),
            monge_map_equal(&a, &r).unwrap()
        );
        assert_eq!(monge_map_interp(&s(&[3.25]), &r).unwrap(), vec![3.25; 4]);
    }

    #[test]
    fn midpoint_weights_agree_with_quantile_fn() {
        let a = s(&[0.3, -2.0, 4.1, 1.0, 1.0, 9.0, -0.7]);
        let q = QuantileFn::new(&a);
        for m_ref in 1..20 {
            let mapped = monge_map_interp(&a, &s(&vec![0.0; m_ref])).unwrap();
            for (m, v) in mapped.iter().enumerate() {
                let u = (m as f64 + 0.5) / m_ref as f64;
                assert!((v - q.quantile(u).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn barycentric_single_atom_is_mean() {
        let a = s(&[1.0, 2.0, 6.0]);
        let m = monge_map_with(&a, 1, Interpolation::Barycentric).unwrap();
        assert!((m[0] - 3.0).abs() < 1e-15);
        // {0, 1} on four reference atoms: each half of the mass maps to one
        // sample.
        let m = monge_map_with(&s(&[1.0, 0.0]), 4, Interpolation::Barycentric).unwrap();
        assert_eq!(m, vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn cdt_examples() {
        let r = s(&[0.4, -1.0, 2.0]);
        assert_eq!(cdt(&r, &r).unwrap(), vec![0.0; 3]);
        assert_eq!(
            cdt(&s(&[1.0, 2.0]), &s(&[0.0, 0.0])).unwrap(),
            vec![1.0, 2.0]
        );
        let a = s(&[3.0, -1.0, 0.5]);
        for p in [1.0, 2.0, 3.5] {
            let lhs = weighted_norm(&cdt(&a, &r).unwrap(), p);
            let rhs = wasserstein_1d(&a, &r, p).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn assignment_oracle_examples() {
        let v = assignment_oracle(&s(&[0.0, 2.0]), &s(&[1.0, 1.0]), 2.0).unwrap();
        assert_eq!(v, 1.0);
        let a = s(&[0.1, 0.7, -3.0]);
        assert_eq!(assignment_oracle(&a, &a, 1.0).unwrap(), 0.0);
        assert!(assignment_oracle(&a, &s(&[1.0]), 1.0).is_err());
        let big = s(&[0.0; 11]);
        assert!(matches!(
            assignment_oracle(&big, &big, 1.0),
            Err(TransportError::TooLarge { .. })
        ));
    }

    #[test]
    fn hungarian_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in 1..=6 {
            for _ in 0..50 {
                let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
                let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
                for p in [1.0, 2.0] {
                    let h = assignment_oracle(&s(&a), &s(&b), p).unwrap();
                    assert!((h - brute_force(&a, &b, p)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn translation() {
        let a = s(&[0.0, 1.0, 5.0]);
        let shifted = s(&[2.5, 3.5, 7.5]);
        for p in [1.0, 2.0, 3.0] {
            assert!((wasserstein_1d(&shifted, &a, p).unwrap() - 2.5).abs() < 1e-12);
        }
    }
}
