//! Kendall's tau-b between two score lists, with a two-sided p-value.
//!
//! For `n <= 8` the p-value is exact: every permutation of the second list is
//! enumerated and the share whose statistic is at least as extreme as the
//! observed one is reported. Larger `n` uses the normal approximation with
//! tie-corrected variance and a continuity correction of 1 on `S = C - D`.

use alloc::string::ToString;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{check_lengths, MetricError};

/// Largest `n` for which the p-value is computed by enumeration.
pub const EXACT_MAX_N: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PValueMethod {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KendallResult {
    pub tau: f64,
    pub p_value: f64,
    pub method: PValueMethod,
}

fn sign(x: f64) -> i64 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// `S = concordant - discordant` over all pairs.
fn s_statistic(a: &[f64], b: &[f64]) -> i64 {
    let mut s = 0;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            s += sign(a[j] - a[i]) * sign(b[j] - b[i]);
        }
    }
    s
}

/// Sizes of groups of equal values.
fn tie_groups(values: &[f64]) -> Vec<u64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            if run > 1 {
                groups.push(run);
            }
            run = 1;
        }
    }
    if run > 1 {
        groups.push(run);
    }
    groups
}

fn tied_pairs(groups: &[u64]) -> u64 {
    groups.iter().map(|t| t * (t - 1) / 2).sum()
}

/// Heap's algorithm over all permutations of `values`.
fn for_each_permutation(values: &mut [f64], mut visit: impl FnMut(&[f64])) {
    let n = values.len();
    let mut c = alloc::vec![0usize; n];
    visit(values);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                values.swap(0, i);
            } else {
                values.swap(c[i], i);
            }
            visit(values);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn exact_p(a: &[f64], b: &[f64], observed: i64) -> f64 {
    let mut permuted = b.to_vec();
    let mut extreme = 0u64;
    let mut total = 0u64;
    for_each_permutation(&mut permuted, |p| {
        total += 1;
        if s_statistic(a, p).abs() >= observed.abs() {
            extreme += 1;
        }
    });
    extreme as f64 / total as f64
}

fn normal_p(n: usize, ties_a: &[u64], ties_b: &[u64], observed: i64) -> f64 {
    let n = n as f64;
    let sum = |g: &[u64], f: fn(f64) -> f64| g.iter().map(|&t| f(t as f64)).sum::<f64>();
    let v0 = n * (n - 1.0) * (2.0 * n + 5.0);
    let vt = sum(ties_a, |t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = sum(ties_b, |u| u * (u - 1.0) * (2.0 * u + 5.0));
    let v1 = sum(ties_a, |t| t * (t - 1.0)) * sum(ties_b, |u| u * (u - 1.0));
    let v2 = sum(ties_a, |t| t * (t - 1.0) * (t - 2.0)) * sum(ties_b, |u| u * (u - 1.0) * (u - 2.0));
    let var = (v0 - vt - vu) / 18.0 + v1 / (2.0 * n * (n - 1.0)) + v2 / (9.0 * n * (n - 1.0) * (n - 2.0));
    let corrected = (observed.abs() as f64 - 1.0).max(0.0);
    let z = corrected / libm::sqrt(var);
    libm::erfc(z / core::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

pub fn kendall_tau(scores_a: &[f64], scores_b: &[f64]) -> Result<KendallResult, MetricError> {
    check_lengths(scores_a.len(), scores_b.len())?;
    let n = scores_a.len();
    if n < 2 {
        return Err(MetricError::TooFewItems(n));
    }
    let ties_a = tie_groups(scores_a);
    let ties_b = tie_groups(scores_b);
    let n0 = (n * (n - 1) / 2) as u64;
    let (n1, n2) = (tied_pairs(&ties_a), tied_pairs(&ties_b));
    if n1 == n0 {
        return Err(MetricError::DegenerateRanking("a".to_string()));
    }
    if n2 == n0 {
        return Err(MetricError::DegenerateRanking("b".to_string()));
    }
    let s = s_statistic(scores_a, scores_b);
    let tau = (s as f64 / libm::sqrt((n0 - n1) as f64 * (n0 - n2) as f64)).clamp(-1.0, 1.0);
    let (p_value, method) = if n <= EXACT_MAX_N {
        (exact_p(scores_a, scores_b, s), PValueMethod::Exact)
    } else {
        (normal_p(n, &ties_a, &ties_b, s), PValueMethod::NormalApproximation)
    };
    Ok(KendallResult { tau, p_value, method })
}
