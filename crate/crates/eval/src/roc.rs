//! ROC analysis.
//!
//! [`roc_auc`] integrates the empirical ROC curve with the trapezoid rule.
//! [`pairwise_auc`] counts correctly ordered (positive, negative) pairs with
//! ties worth one half. The two are algebraically identical; both work in
//! integer counts until the final division, so they agree to the last bit.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::cohort::ScoredCohort;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Operating points from the strictest threshold down, starting at (0, 0)
/// and ending at (1, 1). Tied scores enter the curve together.
pub fn roc_curve(cohort: &ScoredCohort) -> Result<Vec<RocPoint>> {
    cohort.require_both_classes()?;
    let (neg, pos) = cohort.class_counts();
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    for (threshold, tp, fp) in sweep(cohort) {
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Cumulative (threshold, tp, fp) after admitting each group of tied scores,
/// scanning scores in descending order.
fn sweep(cohort: &ScoredCohort) -> Vec<(f64, u64, u64)> {
    let mut scored: Vec<(f64, u8)> = cohort.patients().iter().map(|p| (p.probability, p.label)).collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < scored.len() {
        let s = scored[i].0;
        while i < scored.len() && scored[i].0 == s {
            if scored[i].1 == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((s, tp, fp));
    }
    out
}

/// Area under the ROC curve by the trapezoid rule over the threshold sweep.
pub fn roc_auc(cohort: &ScoredCohort) -> Result<f64> {
    cohort.require_both_classes()?;
    let (neg, pos) = cohort.class_counts();
    // twice the area, in units of 1/(pos·neg)
    let mut twice_area: u128 = 0;
    let (mut prev_tp, mut prev_fp) = (0u64, 0u64);
    for (_, tp, fp) in sweep(cohort) {
        twice_area += u128::from(fp - prev_fp) * u128::from(tp + prev_tp);
        prev_tp = tp;
        prev_fp = fp;
    }
    Ok(twice_area as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Mann–Whitney estimate: fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. Quadratic; used as an oracle.
pub fn pairwise_auc(cohort: &ScoredCohort) -> Result<f64> {
    cohort.require_both_classes()?;
    let pats = cohort.patients();
    let mut twice: u128 = 0;
    let mut pairs: u128 = 0;
    for p in pats.iter().filter(|p| p.label == 1) {
        for n in pats.iter().filter(|p| p.label == 0) {
            pairs += 1;
            twice += match p.probability.partial_cmp(&n.probability) {
                Some(Ordering::Greater) => 2,
                Some(Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    Ok(twice as f64 / (2.0 * pairs as f64))
}
