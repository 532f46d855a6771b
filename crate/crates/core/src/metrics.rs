//! Ranking and threshold metrics for binary scores: AUC, accuracy, EER.
//!
//! Scores are "probability of class 1"; labels are 0 or 1.

use serde::Serialize;

use crate::error::{Result, TsrlError};

fn class_counts(scores: &[f64], labels: &[usize]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(TsrlError::contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(TsrlError::NonFinite(format!("score {s}")));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if labels.iter().any(|&y| y > 1) {
        return Err(TsrlError::contract("labels must be 0 or 1"));
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(TsrlError::UndefinedMetric(
            "both classes must be present".to_string(),
        ));
    }
    Ok((pos, neg))
}

/// Indices sorted by ascending score.
fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Mann-Whitney AUC: the chance a random positive outscores a random
/// negative, ties counted one half. O(n log n).
pub fn auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let idx = ascending(scores);
    // twice the number of winning (positive, negative) pairs, kept integral
    let mut doubled_wins: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let (mut p, mut q) = (0u128, 0u128);
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] == 1 {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        doubled_wins += 2 * p * neg_below + p * q;
        neg_below += q;
        i = j;
    }
    Ok(doubled_wins as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Share of samples where `score >= threshold` agrees with `label == 1`.
pub fn accuracy(scores: &[f64], labels: &[usize], threshold: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(TsrlError::contract("scores and labels differ in length"));
    }
    if scores.is_empty() {
        return Err(TsrlError::UndefinedMetric("no samples".into()));
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, y)| usize::from(**s >= threshold) == **y)
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Equal error rate.
///
/// Thresholds sweep the distinct scores (predict positive when
/// `score >= t`) plus one threshold above every score. Between the two
/// adjacent operating points where `FPR - FNR` changes sign the rates are
/// interpolated linearly.
pub fn eer(scores: &[f64], labels: &[usize]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let idx = ascending(scores);
    // operating points from the lowest threshold (everything positive) upward
    let mut points = Vec::with_capacity(idx.len() + 1);
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let fpr = (neg - neg_below) as f64 / neg as f64;
        let fnr = pos_below as f64 / pos as f64;
        points.push((fpr, fnr));
        let t = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == t {
            if labels[idx[i]] == 1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
    }
    points.push((0.0, 1.0));
    Ok(crossing(&points))
}

/// First crossing of FPR and FNR along a monotone sequence of operating
/// points, interpolated linearly between the bracketing pair.
pub(crate) fn crossing(points: &[(f64, f64)]) -> f64 {
    for w in points.windows(2) {
        let (fa, na) = w[0];
        let (fb, nb) = w[1];
        let da = fa - na;
        let db = fb - nb;
        if da == 0.0 {
            return fa;
        }
        if db == 0.0 {
            return fb;
        }
        if (da > 0.0) != (db > 0.0) {
            let alpha = da / (da - db);
            return fa + alpha * (fb - fa);
        }
    }
    // the sweep always starts at (1, 0) and ends at (0, 1)
    unreachable!("operating points must span FPR - FNR from +1 to -1")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinaryMetrics {
    pub auc: f64,
    pub acc: f64,
    pub eer: f64,
}

pub fn binary_metrics(scores: &[f64], labels: &[usize]) -> Result<BinaryMetrics> {
    Ok(BinaryMetrics {
        auc: auc(scores, labels)?,
        acc: accuracy(scores, labels, 0.5)?,
        eer: eer(scores, labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn separated_scores() {
        let s = [0.1, 0.2, 0.8, 0.9];
        let y = [0, 0, 1, 1];
        assert_eq!(auc(&s, &y).unwrap(), 1.0);
        assert_eq!(eer(&s, &y).unwrap(), 0.0);
        assert_eq!(accuracy(&s, &y, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn constant_scores() {
        let s = [0.4; 6];
        let y = [0, 1, 0, 1, 1, 0];
        assert_eq!(auc(&s, &y).unwrap(), 0.5);
        assert_eq!(eer(&s, &y).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        let s = [0.1, 0.7];
        assert!(matches!(
            auc(&s, &[1, 1]),
            Err(TsrlError::UndefinedMetric(_))
        ));
        assert!(matches!(
            eer(&s, &[0, 0]),
            Err(TsrlError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn eer_can_exceed_half_with_auc_above_half() {
        // 40% of positives above all negatives, the rest below 60% of negatives
        let mut s = Vec::new();
        let mut y = Vec::new();
        for v in [0.9, 0.9, 0.9, 0.9] {
            s.push(v);
            y.push(1);
        }
        for _ in 0..6 {
            s.push(0.6);
            y.push(0);
        }
        for _ in 0..6 {
            s.push(0.4);
            y.push(1);
        }
        for _ in 0..4 {
            s.push(0.1);
            y.push(0);
        }
        assert!((auc(&s, &y).unwrap() - 0.64).abs() < 1e-12);
        assert!((eer(&s, &y).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn interpolates_between_operating_points() {
        // one positive ties with one negative in the middle
        let s = [0.1, 0.5, 0.5, 0.9];
        let y = [0, 0, 1, 1];
        let e = eer(&s, &y).unwrap();
        assert!((e - 0.25).abs() < 1e-12, "{e}");
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec((0u32..30).prop_map(|k| k as f64 / 29.0), n),
                prop::collection::vec(0usize..2, n),
            )
                .prop_filter("both classes", |(_, y)| y.contains(&0) && y.contains(&1))
        })
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_transform((s, y) in scored()) {
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(auc(&s, &y).unwrap(), auc(&t, &y).unwrap());
        }

        #[test]
        fn auc_complement_sums_to_one((s, y) in scored()) {
            let c: Vec<usize> = y.iter().map(|v| 1 - v).collect();
            prop_assert!((auc(&s, &y).unwrap() + auc(&s, &c).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn eer_complement_sums_to_one((s, y) in scored()) {
            let c: Vec<usize> = y.iter().map(|v| 1 - v).collect();
            let e = eer(&s, &y).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
            prop_assert!((e + eer(&s, &c).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn accuracy_complement((s, y) in scored()) {
            let c: Vec<usize> = y.iter().map(|v| 1 - v).collect();
            let a = accuracy(&s, &y, 0.5).unwrap();
            prop_assert!((a + accuracy(&s, &c, 0.5).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
