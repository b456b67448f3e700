//! DeLong's nonparametric comparison of correlated ROC-AUCs, computed with
//! the mid-rank formulation of the structural components.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::cohort::ScoredCohort;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    /// `auc_a − auc_b`
    pub delta_auc: f64,
    pub variance: f64,
    pub z: f64,
    pub p_value: f64,
}

/// 1-based mid-ranks: tied values share the mean of the ranks they span.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mid = 0.5 * ((i + 1) + (j + 1)) as f64;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    ranks
}

/// Placement values of one score vector: (AUC, V10 over positives, V01 over negatives).
fn placements(pos: &[f64], neg: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (m, n) = (pos.len(), neg.len());
    let rx = midranks(pos);
    let ry = midranks(neg);
    let all: Vec<f64> = pos.iter().chain(neg).copied().collect();
    let rz = midranks(&all);
    let v10: Vec<f64> = (0..m).map(|i| (rz[i] - rx[i]) / n as f64).collect();
    let v01: Vec<f64> = (0..n).map(|j| 1.0 - (rz[m + j] - ry[j]) / m as f64).collect();
    let auc = v10.iter().sum::<f64>() / m as f64;
    (auc, v10, v01)
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1) as f64
}

fn split_by_label(cohort: &ScoredCohort) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for p in cohort.patients() {
        if p.label == 1 {
            pos.push(p.probability);
        } else {
            neg.push(p.probability);
        }
    }
    (pos, neg)
}

/// DeLong variance estimate of a single AUC.
pub fn auc_variance(cohort: &ScoredCohort) -> Result<(f64, f64)> {
    cohort.require_both_classes()?;
    let (pos, neg) = split_by_label(cohort);
    let (auc, v10, v01) = placements(&pos, &neg);
    let var = covariance(&v10, &v10) / pos.len() as f64 + covariance(&v01, &v01) / neg.len() as f64;
    Ok((auc, var))
}

/// Two-sided standard-normal tail probability.
pub fn two_sided_p(z: f64) -> f64 {
    libm::erfc(z.abs() / SQRT_2)
}

/// Paired test of `AUC(a) − AUC(b)` on the same patients. `b` is aligned to
/// `a` by patient id; mismatched patients or labels are a contract error.
/// When the variance of the difference vanishes the result is `z = 0, p = 1`.
pub fn delong_test(a: &ScoredCohort, b: &ScoredCohort) -> Result<DelongResult> {
    let b = a.align(b)?;
    a.require_both_classes()?;
    let (pos_a, neg_a) = split_by_label(a);
    let (pos_b, neg_b) = split_by_label(&b);
    let (m, n) = (pos_a.len() as f64, neg_a.len() as f64);
    let (auc_a, v10a, v01a) = placements(&pos_a, &neg_a);
    let (auc_b, v10b, v01b) = placements(&pos_b, &neg_b);

    let s10 = covariance(&v10a, &v10a) + covariance(&v10b, &v10b) - 2.0 * covariance(&v10a, &v10b);
    let s01 = covariance(&v01a, &v01a) + covariance(&v01b, &v01b) - 2.0 * covariance(&v01a, &v01b);
    let variance = s10 / m + s01 / n;
    let delta_auc = auc_a - auc_b;
    let (z, p_value) = if variance > 0.0 && delta_auc != 0.0 {
        let z = delta_auc / variance.sqrt();
        (z, two_sided_p(z))
    } else {
        (0.0, 1.0)
    };
    Ok(DelongResult {
        auc_a,
        auc_b,
        delta_auc,
        variance: variance.max(0.0),
        z,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roc::roc_auc;

    fn cohort() -> ScoredCohort {
        ScoredCohort::from_scores(
            &[0.1, 0.35, 0.4, 0.8, 0.55, 0.2, 0.9, 0.4, 0.65, 0.3],
            &[0, 1, 0, 1, 1, 0, 1, 0, 1, 0],
        )
        .unwrap()
    }

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn placement_auc_matches_trapezoid() {
        let c = cohort();
        let (auc, var) = auc_variance(&c).unwrap();
        assert!((auc - roc_auc(&c).unwrap()).abs() < 1e-12);
        assert!(var > 0.0);
    }

    #[test]
    fn identical_models_give_p_one() {
        let c = cohort();
        let r = delong_test(&c, &c).unwrap();
        assert_eq!((r.delta_auc, r.z, r.p_value), (0.0, 0.0, 1.0));
    }

    #[test]
    fn swapping_models_flips_z() {
        let a = cohort();
        let probs: Vec<f64> = a.probabilities().iter().map(|p| (p * 0.7 + 0.1_f64).min(1.0)).rev().collect();
        let b = ScoredCohort::from_scores(&probs, &a.labels()).unwrap();
        let ab = delong_test(&a, &b).unwrap();
        let ba = delong_test(&b, &a).unwrap();
        assert!(ab.z != 0.0);
        assert_eq!(ab.z, -ba.z);
        assert_eq!(ab.p_value, ba.p_value);
    }

    #[test]
    fn mismatched_patients_error() {
        let a = cohort();
        let b = ScoredCohort::from_scores(&[0.5; 9], &[0, 1, 0, 1, 1, 0, 1, 0, 1]).unwrap();
        assert!(delong_test(&a, &b).is_err());
    }
}
