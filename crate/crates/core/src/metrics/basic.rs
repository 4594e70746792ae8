//! Scalar evaluation metrics: coefficient of determination, average
//! precision, and relative improvement.

use crate::error::{LabError, Result};

/// Coefficient of determination: `1 - SS_res / SS_tot`.
///
/// Unbounded below, at most 1; a model that predicts the observation mean
/// scores exactly 0. Errors when fewer than two observations are given or
/// when the observations are constant (the denominator is then zero).
pub fn r_squared(observations: &[f64], predictions: &[f64]) -> Result<f64> {
    if observations.len() != predictions.len() {
        return Err(LabError::Metric(format!(
            "r_squared needs matching lengths, got {} observations and {} predictions",
            observations.len(),
            predictions.len()
        )));
    }
    if observations.len() < 2 {
        return Err(LabError::Metric(format!(
            "r_squared needs at least 2 observations, got {}",
            observations.len()
        )));
    }
    let n = observations.len() as f64;
    let mean = observations.iter().sum::<f64>() / n;
    let ss_tot: f64 = observations.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(LabError::Metric(
            "r_squared is undefined for constant observations".into(),
        ));
    }
    let ss_res: f64 = observations
        .iter()
        .zip(predictions)
        .map(|(y, f)| (y - f).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Average precision of a binary ranking: area under the precision–recall
/// curve with step interpolation.
///
/// Items are sorted by descending score; equal scores keep their input
/// order (stable sort), so tie handling is deterministic and documented by
/// that rule. Errors when there is no positive label.
pub fn average_precision(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(LabError::Metric(format!(
            "average_precision needs matching lengths, got {} labels and {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(LabError::Metric(
            "average_precision is undefined without a positive label".into(),
        ));
    }
    for (i, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(LabError::Metric(format!(
                "average_precision score {i} is not finite"
            )));
        }
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut true_positives = 0usize;
    let mut sum = 0.0;
    for (seen, &idx) in order.iter().enumerate() {
        if labels[idx] {
            true_positives += 1;
            // Each positive raises recall by 1/positives; precision is taken
            // at the rank where the rise happens (step interpolation).
            sum += true_positives as f64 / (seen + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Result of [`mean_average_precision`]: the mean plus the indices of
/// classes that had to be skipped because they contained no positive.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanAp {
    pub value: f64,
    pub skipped_classes: Vec<usize>,
}

/// Unweighted mean of per-class average precision.
///
/// Inputs are class-major: `labels_by_class[c]` and `scores_by_class[c]`
/// describe every evaluated item for class `c`. A class without a positive
/// label cannot be scored; it is skipped and reported in the result so the
/// caller can log it. Errors when every class is empty of positives.
pub fn mean_average_precision(
    labels_by_class: &[Vec<bool>],
    scores_by_class: &[Vec<f64>],
) -> Result<MeanAp> {
    if labels_by_class.len() != scores_by_class.len() {
        return Err(LabError::Metric(format!(
            "mean_average_precision needs matching class counts, got {} and {}",
            labels_by_class.len(),
            scores_by_class.len()
        )));
    }
    let mut sum = 0.0;
    let mut counted = 0usize;
    let mut skipped = Vec::new();
    for (class, (labels, scores)) in labels_by_class.iter().zip(scores_by_class).enumerate() {
        if labels.iter().any(|&l| l) {
            sum += average_precision(labels, scores)?;
            counted += 1;
        } else {
            skipped.push(class);
        }
    }
    if counted == 0 {
        return Err(LabError::Metric(
            "mean_average_precision has no class with a positive label".into(),
        ));
    }
    Ok(MeanAp {
        value: sum / counted as f64,
        skipped_classes: skipped,
    })
}

/// Relative improvement of a new metric value over an old one: the fraction
/// of previously unexplained headroom that the new value recovers,
/// `(new - old) / (1 - old)`. Multiply by 100 to report a percentage.
///
/// Errors when `old >= 1`: there is no headroom left to improve into.
pub fn relative_improvement(old: f64, new: f64) -> Result<f64> {
    if old >= 1.0 {
        return Err(LabError::Metric(format!(
            "relative_improvement needs old < 1, got {old}"
        )));
    }
    Ok((new - old) / (1.0 - old))
}
