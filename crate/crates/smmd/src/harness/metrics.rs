//! Evaluation metrics over held-out target scores: tie-aware AUC by rank
//! statistic, precision and F-score at a decision threshold.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One evaluation's worth of numbers, plus the loss curve and wall-clock
/// phases of the run that produced it.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Metrics {
    pub fscore: f64,
    pub auc: f64,
    pub precision: f64,
    pub loss_curve: Vec<f64>,
    pub wall_ms: BTreeMap<String, u64>,
}

/// Tie-aware AUC: ties contribute half. Equivalent to brute-force pair
/// counting `(#correctly ordered + #ties/2) / (P * N)`.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Metric("scores and labels must align and be nonempty".into()));
    }
    let p = labels.iter().filter(|y| **y > 0.0).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::Metric(
            "AUC undefined on a single-class test set".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // average ranks over tie groups (1-based ranks)
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] > 0.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (p * (p + 1)) as f64 / 2.0;
    Ok(u / (p as f64 * n as f64))
}

/// Precision and F-score with positives predicted at `score > threshold`
/// (threshold 0 means: the sign of the score decides).
pub fn precision_fscore(scores: &[f64], labels: &[f64], threshold: f64) -> Result<(f64, f64)> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Metric("scores and labels must align and be nonempty".into()));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (s, y) in scores.iter().zip(labels) {
        let predicted_pos = *s > threshold;
        let actual_pos = *y > 0.0;
        match (predicted_pos, actual_pos) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let fscore = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, fscore))
}

pub fn evaluate_scores(scores: &[f64], labels: &[f64], threshold: f64) -> Result<Metrics> {
    let auc_v = auc(scores, labels)?;
    let (precision, fscore) = precision_fscore(scores, labels, threshold)?;
    Ok(Metrics { fscore, auc: auc_v, precision, ..Default::default() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// O(P*N) pair-counting oracle, ties at half weight.
    fn auc_brute(scores: &[f64], labels: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, yi) in labels.iter().enumerate() {
            if *yi <= 0.0 {
                continue;
            }
            for (j, yj) in labels.iter().enumerate() {
                if *yj > 0.0 {
                    continue;
                }
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / den
    }

    #[test]
    fn pinned_auc_values() {
        // perfectly separated
        let m = evaluate_scores(&[0.9, 0.8, -0.5, -0.9], &[1.0, 1.0, -1.0, -1.0], 0.0).unwrap();
        assert_abs_diff_eq!(m.auc, 1.0);
        assert_abs_diff_eq!(m.fscore, 1.0);
        assert_abs_diff_eq!(m.precision, 1.0);

        // constant scores: all ties, auc 1/2
        assert_abs_diff_eq!(auc(&[0.3, 0.3, 0.3], &[1.0, -1.0, 1.0]).unwrap(), 0.5);

        // 1 of 2 positive-negative pairs ordered correctly
        assert_abs_diff_eq!(auc(&[0.9, 0.8, 0.3], &[1.0, -1.0, 1.0]).unwrap(), 0.5);
    }

    #[test]
    fn auc_matches_brute_force_with_ties() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for trial in 0..50 {
            let n = rng.random_range(5..500);
            let mut scores = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            let mut has = [false, false];
            for _ in 0..n {
                // coarse grid forces plenty of ties
                scores.push((rng.random_range(-1.0f64..1.0) * 4.0).round() / 4.0);
                let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
                has[(y > 0.0) as usize] = true;
                labels.push(y);
            }
            if !(has[0] && has[1]) {
                continue;
            }
            let fast = auc(&scores, &labels).unwrap();
            let brute = auc_brute(&scores, &labels);
            assert_abs_diff_eq!(fast, brute, epsilon = 1e-12);
            let _ = trial;
        }
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(auc(&[0.1, 0.2], &[1.0, 1.0]).is_err());
        assert!(auc(&[], &[]).is_err());
    }

    #[test]
    fn threshold_semantics_are_strict_greater() {
        // score exactly at threshold counts as a negative prediction
        let (precision, fscore) =
            precision_fscore(&[0.0, 0.5], &[1.0, 1.0], 0.0).unwrap();
        assert_abs_diff_eq!(precision, 1.0);
        assert!(fscore < 1.0);
        // no predicted positives: zero by convention
        let (p0, f0) = precision_fscore(&[-1.0, -2.0], &[1.0, -1.0], 0.0).unwrap();
        assert_eq!((p0, f0), (0.0, 0.0));
    }
}
