//! Ranking of competing methods on a shared metric.

use crate::error::{LabError, Result};

/// Rank a set of method scores: rank 1 is best, ties share the mean of the
/// ranks they cover. `higher_is_better` selects the sort direction (true
/// for metrics like accuracy, false for losses).
pub fn rank_methods(values: &[f64], higher_is_better: bool) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(LabError::Metric(format!(
            "rank_methods needs at least 2 methods, got {}",
            values.len()
        )));
    }
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(LabError::Metric(format!("rank_methods value {i} is not finite")));
        }
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let cmp = values[a].partial_cmp(&values[b]).unwrap();
        if higher_is_better {
            cmp.reverse()
        } else {
            cmp
        }
    });
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        // Positions start+1 ..= end+1 are covered by this tie group.
        let mean_rank = (start + end) as f64 / 2.0 + 1.0;
        for &idx in &order[start..=end] {
            ranks[idx] = mean_rank;
        }
        start = end + 1;
    }
    Ok(ranks)
}

/// Mean and standard error of the mean of a sample of ranks.
pub fn mean_and_standard_error(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(LabError::Metric("mean of an empty sample".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distinct_values_get_plain_ranks() {
        let ranks = rank_methods(&[0.3, 0.2, 0.1], true).unwrap();
        assert_eq!(ranks, vec![1.0, 2.0, 3.0]);
        let ranks = rank_methods(&[0.3, 0.2, 0.1], false).unwrap();
        assert_eq!(ranks, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn two_way_tie_for_best_shares_mean_rank() {
        let ranks = rank_methods(&[0.5, 0.5, 0.1], true).unwrap();
        assert_eq!(ranks, vec![1.5, 1.5, 3.0]);
    }

    #[test]
    fn ranks_always_sum_to_permutation_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.random_range(2..8);
            // Coarse grid to trigger plenty of ties.
            let values: Vec<f64> = (0..n)
                .map(|_| rng.random_range(0..4) as f64 / 3.0)
                .collect();
            let ranks = rank_methods(&values, rng.random_bool(0.5)).unwrap();
            let want = (n * (n + 1)) as f64 / 2.0;
            assert!((ranks.iter().sum::<f64>() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_and_standard_error_frozen() {
        // Sample {1,2,3}: mean 2, sample variance 1, SE = 1/sqrt(3).
        let (mean, se) = mean_and_standard_error(&[1.0, 2.0, 3.0]).unwrap();
        assert!((mean - 2.0).abs() < 1e-15);
        assert!((se - 1.0 / 3.0f64.sqrt()).abs() < 1e-15);
        let (_, se1) = mean_and_standard_error(&[4.0]).unwrap();
        assert_eq!(se1, 0.0);
    }

    #[test]
    fn single_method_is_rejected() {
        assert!(rank_methods(&[0.1], true).is_err());
    }
}
