//! Significance testing for paired method comparisons: a one-sided
//! Wilcoxon signed-rank test and the Holm–Bonferroni step-down correction
//! for families of such tests.

use crate::error::{LabError, Result};
use statrs::distribution::{ContinuousCDF, Normal};

/// Largest effective sample size for which the exact null distribution of
/// the signed-rank statistic is enumerated; larger samples use the normal
/// approximation with continuity and tie corrections.
pub const EXACT_LIMIT: usize = 25;

/// One-sided Wilcoxon signed-rank test for the alternative "paired
/// differences are greater than zero".
///
/// Zero differences are dropped before ranking (the conventional
/// treatment); ties in magnitude share the mean of the ranks they cover.
/// Up to [`EXACT_LIMIT`] non-zero differences the p-value is exact — the
/// full null distribution of W⁺ over all 2ⁿ sign assignments is counted by
/// dynamic programming over doubled ranks (doubling turns every mean tied
/// rank into an integer). Beyond that the normal approximation is used
/// with a continuity correction of ½ and the tie-adjusted variance.
///
/// Errors when every difference is zero: the test is undefined.
pub fn wilcoxon_one_sided_greater(differences: &[f64]) -> Result<f64> {
    for (i, d) in differences.iter().enumerate() {
        if !d.is_finite() {
            return Err(LabError::Metric(format!(
                "wilcoxon difference {i} is not finite"
            )));
        }
    }
    let nonzero: Vec<f64> = differences.iter().copied().filter(|d| *d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(LabError::Metric(
            "wilcoxon test is undefined when all differences are zero".into(),
        ));
    }
    let n = nonzero.len();
    let doubled = doubled_magnitude_ranks(&nonzero);
    let w_plus_doubled: u64 = nonzero
        .iter()
        .zip(&doubled)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    if n <= EXACT_LIMIT {
        Ok(exact_upper_tail(&doubled, w_plus_doubled))
    } else {
        Ok(normal_upper_tail(&doubled, w_plus_doubled))
    }
}

/// Ranks of |d| over 1..=n with mean tied ranks, scaled by 2 so that every
/// rank is an integer (a tie group covering positions a..=b has mean rank
/// (a+b)/2, hence doubled rank a+b).
fn doubled_magnitude_ranks(nonzero: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..nonzero.len()).collect();
    order.sort_by(|&a, &b| nonzero[a].abs().partial_cmp(&nonzero[b].abs()).unwrap());
    let mut doubled = vec![0u64; nonzero.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len()
            && nonzero[order[end + 1]].abs() == nonzero[order[start]].abs()
        {
            end += 1;
        }
        // 1-based positions start+1 ..= end+1; doubled mean rank = sum of ends.
        let rank2 = (start + 1 + end + 1) as u64;
        for &idx in &order[start..=end] {
            doubled[idx] = rank2;
        }
        start = end + 1;
    }
    doubled
}

/// Exact P(W⁺ ≥ observed) under the null: every sign pattern of the n
/// differences is equally likely, so count subset rank-sums by dynamic
/// programming. Counts fit u64 comfortably for n ≤ 25 (≤ 2²⁵ patterns).
fn exact_upper_tail(doubled: &[u64], observed_doubled: u64) -> f64 {
    let total_sum: u64 = doubled.iter().sum();
    let mut counts = vec![0u64; total_sum as usize + 1];
    counts[0] = 1;
    for &r in doubled {
        for s in (r as usize..counts.len()).rev() {
            counts[s] += counts[s - r as usize];
        }
    }
    let tail: u64 = counts[observed_doubled as usize..].iter().sum();
    tail as f64 / 2f64.powi(doubled.len() as i32)
}

/// Normal approximation to P(W⁺ ≥ observed) with continuity correction and
/// the standard tie correction on the variance.
fn normal_upper_tail(doubled: &[u64], observed_doubled: u64) -> f64 {
    let n = doubled.len() as f64;
    let w = observed_doubled as f64 / 2.0;
    let mean = n * (n + 1.0) / 4.0;
    // Tie correction: subtract Σ(t³ − t)/48 over tie groups of size t.
    let mut sorted = doubled.to_vec();
    sorted.sort_unstable();
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let variance = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if variance <= 0.0 {
        // Every rank tied into one group of identical magnitudes leaves no
        // spread only when n = 1, which the exact branch always handles;
        // guard anyway.
        return if w >= mean { 0.5 } else { 1.0 };
    }
    let z = (w - mean - 0.5) / variance.sqrt();
    let standard = Normal::new(0.0, 1.0).unwrap();
    1.0 - standard.cdf(z)
}

/// Outcome of the Holm–Bonferroni step-down procedure, in input order.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HolmOutcome {
    /// Whether each hypothesis is rejected at the requested level.
    pub rejected: Vec<bool>,
    /// Adjusted p-values: running maximum of (m−k+1)·p₍ₖ₎, clipped to 1.
    pub adjusted: Vec<f64>,
}

/// Holm–Bonferroni correction for a family of p-values.
///
/// Sorted ascending, hypothesis k (1-based) is tested at level
/// α/(m−k+1); rejection proceeds step-down and stops at the first failure.
/// Adjusted p-values are the running maximum of (m−k+1)·p₍ₖ₎ clipped to 1,
/// which makes "adjusted ≤ α" equivalent to the step-down decision.
pub fn holm_bonferroni(p_values: &[f64], alpha: f64) -> Result<HolmOutcome> {
    if p_values.is_empty() {
        return Err(LabError::Metric("holm correction of an empty family".into()));
    }
    if !(0.0..1.0).contains(&alpha) || alpha <= 0.0 {
        return Err(LabError::Metric(format!(
            "holm significance level must be in (0,1), got {alpha}"
        )));
    }
    for (i, p) in p_values.iter().enumerate() {
        if !(0.0..=1.0).contains(p) {
            return Err(LabError::Metric(format!(
                "p-value {i} out of [0,1]: {p}"
            )));
        }
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].partial_cmp(&p_values[b]).unwrap());
    let mut rejected = vec![false; m];
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    let mut still_rejecting = true;
    for (k, &idx) in order.iter().enumerate() {
        let multiplier = (m - k) as f64;
        running = running.max((multiplier * p_values[idx]).min(1.0));
        adjusted[idx] = running;
        if still_rejecting && p_values[idx] <= alpha / multiplier {
            rejected[idx] = true;
        } else {
            still_rejecting = false;
        }
    }
    Ok(HolmOutcome { rejected, adjusted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force oracle: enumerate all 2ⁿ sign assignments explicitly.
    fn wilcoxon_oracle(differences: &[f64]) -> f64 {
        let nonzero: Vec<f64> = differences.iter().copied().filter(|d| *d != 0.0).collect();
        let doubled = doubled_magnitude_ranks(&nonzero);
        let observed: u64 = nonzero
            .iter()
            .zip(&doubled)
            .filter(|(d, _)| **d > 0.0)
            .map(|(_, r)| *r)
            .sum();
        let n = nonzero.len();
        let mut at_least = 0u64;
        for pattern in 0u64..(1 << n) {
            let sum: u64 = (0..n)
                .filter(|i| pattern >> i & 1 == 1)
                .map(|i| doubled[i])
                .sum();
            if sum >= observed {
                at_least += 1;
            }
        }
        at_least as f64 / 2f64.powi(n as i32)
    }

    #[test]
    fn all_positive_five_pairs() {
        let p = wilcoxon_one_sided_greater(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((p - 1.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn single_positive_pair() {
        let p = wilcoxon_one_sided_greater(&[0.7]).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zeros_are_dropped() {
        let with_zeros = wilcoxon_one_sided_greater(&[0.0, 1.0, 0.0, -2.0, 3.0]).unwrap();
        let without = wilcoxon_one_sided_greater(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(with_zeros, without);
        assert!(wilcoxon_one_sided_greater(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn exact_p_matches_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        for n in 1..=10usize {
            for _ in 0..20 {
                // Coarse magnitudes force tied ranks; random signs.
                let diffs: Vec<f64> = (0..n)
                    .map(|_| {
                        let mag = rng.random_range(1..5) as f64;
                        if rng.random_bool(0.5) {
                            mag
                        } else {
                            -mag
                        }
                    })
                    .collect();
                let got = wilcoxon_one_sided_greater(&diffs).unwrap();
                let want = wilcoxon_oracle(&diffs);
                assert_eq!(got, want, "diffs {diffs:?}");
            }
        }
    }

    #[test]
    fn normal_branch_tracks_exact_counts() {
        // 30 pairs exceeds the exact limit, but the dynamic program still
        // counts the true null distribution fine — use it as the oracle.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let diffs: Vec<f64> = (0..30)
                .map(|_| {
                    let mag = rng.random_range(1..7) as f64;
                    if rng.random_bool(0.7) {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            let approx = wilcoxon_one_sided_greater(&diffs).unwrap();
            let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
            let doubled = doubled_magnitude_ranks(&nonzero);
            let observed: u64 = nonzero
                .iter()
                .zip(&doubled)
                .filter(|(d, _)| **d > 0.0)
                .map(|(_, r)| *r)
                .sum();
            let exact = exact_upper_tail(&doubled, observed);
            assert!(
                (approx - exact).abs() < 0.01,
                "approx {approx} vs exact {exact}"
            );
        }
    }

    #[test]
    fn strong_positive_effect_is_significant_under_approximation() {
        let diffs: Vec<f64> = (1..=30).map(|i| i as f64).collect();
        let p = wilcoxon_one_sided_greater(&diffs).unwrap();
        assert!(p < 1e-5, "p = {p}");
    }

    #[test]
    fn holm_single_p_reduces_to_plain_test() {
        let out = holm_bonferroni(&[0.04], 0.05).unwrap();
        assert_eq!(out.rejected, vec![true]);
        assert!((out.adjusted[0] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn holm_step_down_rejects_both() {
        let out = holm_bonferroni(&[0.01, 0.04], 0.05).unwrap();
        assert_eq!(out.rejected, vec![true, true]);
        assert!((out.adjusted[0] - 0.02).abs() < 1e-15);
        assert!((out.adjusted[1] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn holm_stops_at_first_failure() {
        let out = holm_bonferroni(&[0.03, 0.04], 0.05).unwrap();
        assert_eq!(out.rejected, vec![false, false]);
        assert!((out.adjusted[0] - 0.06).abs() < 1e-15);
        assert!((out.adjusted[1] - 0.06).abs() < 1e-15);
    }

    #[test]
    fn holm_decisions_match_adjusted_threshold_and_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let m = rng.random_range(1..7);
            let ps: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..0.3)).collect();
            let alpha = 0.05;
            let out = holm_bonferroni(&ps, alpha).unwrap();
            for i in 0..m {
                assert_eq!(out.rejected[i], out.adjusted[i] <= alpha, "ps {ps:?}");
            }
            // Lowering one p-value must never un-reject any other.
            let mut lowered = ps.clone();
            let which = rng.random_range(0..m);
            lowered[which] /= 2.0;
            let out2 = holm_bonferroni(&lowered, alpha).unwrap();
            for i in 0..m {
                if i != which && out.rejected[i] {
                    assert!(out2.rejected[i], "ps {ps:?} lowered {which}");
                }
            }
        }
    }
}
