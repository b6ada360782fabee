//! Two-sample tests: Wilcoxon rank-sum (Mann-Whitney) and Kolmogorov-Smirnov.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest sample size for which the exact rank-sum null is used.
pub const EXACT_MAX: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSumResult {
    /// Sum of the ranks of `a` in the pooled sample (midranks for ties).
    pub w: f64,
    /// Mann-Whitney U of `a`: `w - m(m+1)/2`.
    pub u: f64,
    /// Normal deviate; absent when the exact null was used.
    pub z: Option<f64>,
    /// Two-sided p-value.
    pub p_value: f64,
    pub exact: bool,
}

fn check_samples(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData { what: "two-sample test".into(), msg: "empty sample".into() });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InsufficientData { what: "two-sample test".into(), msg: "non-finite observation".into() });
    }
    Ok(())
}

/// Midranks (1-based) of the pooled sample and the tie-group sizes.
fn pooled_ranks(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mid;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Counts of each U value under the null for sizes `m`, `n`.
fn u_distribution(m: usize, n: usize) -> Vec<f64> {
    // f[i][j][u]: arrangements of i a's and j b's with statistic u.
    let mut prev: Vec<Vec<f64>> = (0..=n).map(|_| vec![1.0]).collect();
    for _ in 1..=m {
        let mut cur: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        cur.push(vec![1.0]);
        for j in 1..=n {
            // Largest element is an a (adds j to U) or a b.
            let with_a = &prev[j];
            let with_b = &cur[j - 1];
            let len = (with_a.len() + j).max(with_b.len());
            let mut f = vec![0.0; len];
            for (u, c) in with_a.iter().enumerate() {
                f[u + j] += c;
            }
            for (u, c) in with_b.iter().enumerate() {
                f[u] += c;
            }
            cur.push(f);
        }
        prev = cur;
    }
    prev.pop().expect("n + 1 rows")
}

/// Wilcoxon rank-sum test, two-sided. Exact null when both samples have at
/// most [`EXACT_MAX`] observations and there are no ties; otherwise the
/// tie-corrected normal approximation.
pub fn rank_sum_test(a: &[f64], b: &[f64]) -> Result<RankSumResult> {
    check_samples(a, b)?;
    let (m, n) = (a.len(), b.len());
    let (ranks, ties) = pooled_ranks(a, b);
    let w: f64 = ranks[..m].iter().sum();
    let mf = m as f64;
    let nf = n as f64;
    let u = w - mf * (mf + 1.0) / 2.0;
    let has_ties = ties.iter().any(|&t| t > 1);
    if !has_ties && m <= EXACT_MAX && n <= EXACT_MAX {
        let dist = u_distribution(m, n);
        let total: f64 = dist.iter().sum();
        let ui = u as usize;
        let lower: f64 = dist[..=ui].iter().sum::<f64>() / total;
        let upper: f64 = dist[ui..].iter().sum::<f64>() / total;
        let p_value = (2.0 * lower.min(upper)).min(1.0);
        return Ok(RankSumResult { w, u, z: None, p_value, exact: true });
    }
    let big_n = mf + nf;
    let tie_term: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum();
    let var = mf * nf / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
    let mu = mf * nf / 2.0;
    let z = if var > 0.0 { (u - mu) / var.sqrt() } else { 0.0 };
    let normal = Normal::standard();
    let p_value = (2.0 * normal.cdf(-z.abs())).min(1.0);
    Ok(RankSumResult { w, u, z: Some(z), p_value, exact: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
}

/// Kolmogorov survival function `Q(lambda) = 2 sum (-1)^(j-1) exp(-2 j^2 lambda^2)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let a2 = -2.0 * lambda * lambda;
    let mut sum = 0.0;
    let mut sign = 2.0;
    let mut prev_term = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = sign * (a2 * jf * jf).exp();
        sum += term;
        if term.abs() <= 1e-3 * prev_term || term.abs() <= 1e-8 * sum {
            return sum.clamp(0.0, 1.0);
        }
        sign = -sign;
        prev_term = term.abs();
    }
    1.0
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_test(a: &[f64], b: &[f64]) -> Result<KsResult> {
    check_samples(a, b)?;
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (m, n) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < m && j < n {
        let v = x[i].min(y[j]);
        while i < m && x[i] == v {
            i += 1;
        }
        while j < n && y[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / m as f64 - j as f64 / n as f64).abs());
    }
    let ne = (m * n) as f64 / (m + n) as f64;
    let sq = ne.sqrt();
    let p_value = kolmogorov_q((sq + 0.12 + 0.11 / sq) * d);
    Ok(KsResult { d, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn rank_sum_exact_separated() {
        let r = rank_sum_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!(r.exact);
        assert_eq!(r.u, 0.0);
        assert_eq!(r.w, 6.0);
        assert_abs_diff_eq!(r.p_value, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn rank_sum_identical_samples() {
        let a = [0.3, -0.1, 0.7, 0.2];
        let r = rank_sum_test(&a, &a).unwrap();
        assert!(!r.exact);
        assert_eq!(r.u, 8.0);
        assert_abs_diff_eq!(r.p_value, 1.0);
    }

    #[test]
    fn rank_sum_is_permutation_invariant() {
        let a = [0.5, 1.5, -2.0, 3.25, 0.0, 9.0, 4.0, -1.0, 2.0];
        let b = [1.0, -0.5, 2.5, 7.0, 0.25];
        let r1 = rank_sum_test(&a, &b).unwrap();
        let mut a2 = a;
        a2.reverse();
        let mut b2 = b;
        b2.swap(0, 4);
        assert_eq!(r1, rank_sum_test(&a2, &b2).unwrap());
    }

    #[test]
    fn u_distribution_counts() {
        // m = n = 2: U in {0, 1, 2, 2, 3, 4}.
        assert_eq!(u_distribution(2, 2), vec![1.0, 1.0, 2.0, 1.0, 1.0]);
        assert_eq!(u_distribution(3, 3).iter().sum::<f64>(), 20.0);
        assert_eq!(u_distribution(1, 4), vec![1.0; 5]);
    }

    #[test]
    fn ks_cases() {
        let a = [0.1, 0.4, -0.3];
        let r = ks_test(&a, &a).unwrap();
        assert_eq!(r.d, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(ks_test(&[0.0; 3], &[1.0; 3]).unwrap().d, 1.0);
        assert!(ks_test(&[], &[1.0]).is_err());
    }

    #[test]
    fn kolmogorov_q_reference_points() {
        // Q(1.0) = 0.26999967..., Q(0.5) = 0.96394524...
        assert_abs_diff_eq!(kolmogorov_q(1.0), 0.269_999_67, epsilon = 1e-6);
        assert_abs_diff_eq!(kolmogorov_q(0.5), 0.963_945_24, epsilon = 1e-6);
        assert!(kolmogorov_q(3.0) < 1e-6);
    }

    proptest! {
        #[test]
        fn ks_p_is_a_probability(a in proptest::collection::vec(-1.0f64..1.0, 1..20),
                                 b in proptest::collection::vec(-1.0f64..1.0, 1..20)) {
            let r = ks_test(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            prop_assert!((0.0..=1.0).contains(&r.d));
            let s = rank_sum_test(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&s.p_value));
        }
    }
}
