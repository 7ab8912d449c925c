//! Confusion-matrix accounting and the four evaluation metrics
//! (accuracy, precision, recall, F1), with explicit zero-division flags.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Names of metrics where a 0/0 denominator fired (value forced to 0).
    pub zero_division_flags: BTreeSet<String>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("length mismatch: {probs} probabilities vs {labels} labels")]
    LengthMismatch { probs: usize, labels: usize },
    #[error("empty input: no samples to evaluate")]
    EmptyInput,
    #[error("empty counts: tp+fp+tn+fn must be >= 1")]
    EmptyCounts,
}

/// Tally predictions (probability >= threshold, ties positive) against
/// binary labels with the positive class encoded as 1.0.
pub fn confusion(probs: &[f32], labels: &[f32], threshold: f32) -> Result<ConfusionCounts, MetricsError> {
    if probs.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { probs: probs.len(), labels: labels.len() });
    }
    if probs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut c = ConfusionCounts { tp: 0, fp: 0, tn: 0, fn_: 0 };
    for (&p, &y) in probs.iter().zip(labels) {
        let pred = p >= threshold;
        let pos = y >= 0.5;
        match (pred, pos) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// precision = TP/(TP+FP), recall = TP/(TP+FN), f1 = 2pr/(p+r),
/// accuracy = (TP+TN)/total. A 0/0 denominator yields 0 and flags the metric.
pub fn compute_metrics(c: &ConfusionCounts) -> Result<MetricsReport, MetricsError> {
    if c.total() == 0 {
        return Err(MetricsError::EmptyCounts);
    }
    let mut flags = BTreeSet::new();
    let mut ratio = |num: u64, den: u64, name: &str| -> f64 {
        if den == 0 {
            flags.insert(name.to_string());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(c.tp, c.tp + c.fp, "precision");
    let recall = ratio(c.tp, c.tp + c.fn_, "recall");
    let accuracy = (c.tp + c.tn) as f64 / c.total() as f64;
    let f1 = if precision + recall == 0.0 {
        flags.insert("f1".to_string());
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricsReport { accuracy, precision, recall, f1, zero_division_flags: flags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent brute-force implementation used only as a test oracle.
    fn oracle(c: &ConfusionCounts) -> (f64, f64, f64, f64) {
        let (tp, fp, tn, fnn) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let acc = (tp + tn) / (tp + fp + tn + fnn);
        (acc, p, r, f1)
    }

    #[test]
    fn confusion_enumerates_the_four_cells() {
        let c = confusion(&[0.9, 0.2, 0.7, 0.4], &[1.0, 0.0, 0.0, 1.0], 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, tn: 1, fn_: 1 });
    }

    #[test]
    fn confusion_all_positive() {
        let c = confusion(&[1.0; 5], &[1.0; 5], 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 5, fp: 0, tn: 0, fn_: 0 });
    }

    #[test]
    fn confusion_tie_at_threshold_is_positive() {
        let c = confusion(&[0.5], &[1.0], 0.5).unwrap();
        assert_eq!(c.tp, 1);
    }

    #[test]
    fn confusion_errors() {
        assert_eq!(
            confusion(&[0.5], &[], 0.5).unwrap_err(),
            MetricsError::LengthMismatch { probs: 1, labels: 0 }
        );
        assert_eq!(confusion(&[], &[], 0.5).unwrap_err(), MetricsError::EmptyInput);
    }

    #[test]
    fn counts_always_sum_to_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.gen_range(1..200);
            let probs: Vec<f32> = (0..n).map(|_| rng.gen()).collect();
            let labels: Vec<f32> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect();
            let c = confusion(&probs, &labels, 0.5).unwrap();
            assert_eq!(c.total(), n as u64);
        }
    }

    #[test]
    fn symmetric_counts_give_all_half() {
        let r = compute_metrics(&ConfusionCounts { tp: 1, fp: 1, tn: 1, fn_: 1 }).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (0.5, 0.5, 0.5, 0.5));
        assert!(r.zero_division_flags.is_empty());
    }

    #[test]
    fn hand_checked_case() {
        let r = compute_metrics(&ConfusionCounts { tp: 90, fp: 10, tn: 0, fn_: 0 }).unwrap();
        assert!((r.precision - 0.90).abs() < 1e-12);
        assert!((r.recall - 1.0).abs() < 1e-12);
        assert!((r.f1 - 2.0 * 0.9 / 1.9).abs() < 1e-12);
        assert!((r.accuracy - 0.90).abs() < 1e-12);
    }

    #[test]
    fn zero_division_convention() {
        let r = compute_metrics(&ConfusionCounts { tp: 0, fp: 0, tn: 5, fn_: 0 }).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        let flagged: Vec<&str> = r.zero_division_flags.iter().map(|s| s.as_str()).collect();
        assert_eq!(flagged, ["f1", "precision", "recall"]);
    }

    #[test]
    fn empty_counts_rejected() {
        assert_eq!(
            compute_metrics(&ConfusionCounts { tp: 0, fp: 0, tn: 0, fn_: 0 }).unwrap_err(),
            MetricsError::EmptyCounts
        );
    }

    #[test]
    fn agrees_with_brute_force_oracle_on_1000_random_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2936);
        for _ in 0..1000 {
            let c = ConfusionCounts {
                tp: rng.gen_range(0..500),
                fp: rng.gen_range(0..500),
                tn: rng.gen_range(0..500),
                fn_: rng.gen_range(0..500),
            };
            if c.total() == 0 {
                continue;
            }
            let r = compute_metrics(&c).unwrap();
            let (acc, p, rec, f1) = oracle(&c);
            assert!((r.accuracy - acc).abs() < 1e-12);
            assert!((r.precision - p).abs() < 1e-12);
            assert!((r.recall - rec).abs() < 1e-12);
            assert!((r.f1 - f1).abs() < 1e-12);
            // Flags must fire on exactly the 0/0 cases.
            assert_eq!(r.zero_division_flags.contains("precision"), c.tp + c.fp == 0);
            assert_eq!(r.zero_division_flags.contains("recall"), c.tp + c.fn_ == 0);
        }
    }

    #[test]
    fn scaling_invariance_and_harmonic_bound() {
        let base = ConfusionCounts { tp: 7, fp: 3, tn: 11, fn_: 2 };
        let a = compute_metrics(&base).unwrap();
        let b = compute_metrics(&ConfusionCounts {
            tp: base.tp * 9,
            fp: base.fp * 9,
            tn: base.tn * 9,
            fn_: base.fn_ * 9,
        })
        .unwrap();
        assert!((a.accuracy - b.accuracy).abs() < 1e-12);
        assert!((a.f1 - b.f1).abs() < 1e-12);
        assert!(a.f1 <= a.precision.max(a.recall) + 1e-12);
        assert!(a.f1 >= a.precision.min(a.recall) - 1e-12);
    }

    #[test]
    fn perfect_accuracy_iff_no_errors() {
        let perfect = compute_metrics(&ConfusionCounts { tp: 3, fp: 0, tn: 4, fn_: 0 }).unwrap();
        assert_eq!(perfect.accuracy, 1.0);
        let flawed = compute_metrics(&ConfusionCounts { tp: 3, fp: 1, tn: 4, fn_: 0 }).unwrap();
        assert!(flawed.accuracy < 1.0);
    }
}
