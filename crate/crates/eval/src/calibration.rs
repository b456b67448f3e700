use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cohort::ScoredCohort;
use crate::error::{EvalError, Result};

pub const DEFAULT_BINS: usize = 5;

/// One reliability-diagram bin over `[lower, upper)`; the last bin also
/// includes 1.0. Empty bins carry `None` for both means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
    pub mean_predicted: Option<f64>,
    pub observed_fraction: Option<f64>,
}

impl CalibrationBin {
    pub fn gap(&self) -> Option<f64> {
        Some(self.observed_fraction? - self.mean_predicted?)
    }
}

impl fmt::Display for CalibrationBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.mean_predicted, self.observed_fraction) {
            (Some(m), Some(o)) => write!(f, "(mean {m:.2}, n {}, observed {o:.2})", self.n),
            _ => write!(f, "(empty, n 0)"),
        }
    }
}

/// Equal-width bins on `[0, 1]` with per-bin count, mean predicted
/// probability and observed positive fraction.
pub fn reliability_bins(cohort: &ScoredCohort, n_bins: usize) -> Result<Vec<CalibrationBin>> {
    if n_bins < 2 {
        return Err(EvalError::Parameter(format!("need at least 2 bins, got {n_bins}")));
    }
    let mut sums = vec![(0usize, 0.0f64, 0usize); n_bins];
    for p in cohort.patients() {
        let b = ((p.probability * n_bins as f64) as usize).min(n_bins - 1);
        sums[b].0 += 1;
        sums[b].1 += p.probability;
        sums[b].2 += usize::from(p.label);
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(i, (n, psum, pos))| CalibrationBin {
            lower: i as f64 / n_bins as f64,
            upper: (i + 1) as f64 / n_bins as f64,
            n,
            mean_predicted: (n > 0).then(|| psum / n as f64),
            observed_fraction: (n > 0).then(|| pos as f64 / n as f64),
        })
        .collect())
}

/// Count-weighted mean absolute gap between observed and predicted.
pub fn expected_calibration_error(bins: &[CalibrationBin]) -> f64 {
    let total: usize = bins.iter().map(|b| b.n).sum();
    if total == 0 {
        return 0.0;
    }
    bins.iter()
        .filter_map(|b| Some(b.n as f64 * b.gap()?.abs()))
        .sum::<f64>()
        / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_half_probability() {
        let c = ScoredCohort::from_scores(&[0.5; 8], &[0, 1, 0, 1, 0, 1, 0, 1]).unwrap();
        let bins = reliability_bins(&c, 5).unwrap();
        let occupied: Vec<_> = bins.iter().filter(|b| b.n > 0).collect();
        assert_eq!(occupied.len(), 1);
        assert_eq!(occupied[0].mean_predicted, Some(0.5));
        assert_eq!(occupied[0].observed_fraction, Some(0.5));
        assert_eq!(occupied[0].gap(), Some(0.0));
        assert_eq!(bins.iter().map(|b| b.n).sum::<usize>(), 8);
    }

    #[test]
    fn hard_labels_land_in_end_bins() {
        let c = ScoredCohort::from_scores(&[0.0, 1.0, 1.0, 0.0], &[0, 1, 1, 0]).unwrap();
        let bins = reliability_bins(&c, 5).unwrap();
        assert_eq!((bins[0].mean_predicted, bins[0].observed_fraction), (Some(0.0), Some(0.0)));
        assert_eq!((bins[4].mean_predicted, bins[4].observed_fraction), (Some(1.0), Some(1.0)));
        assert_eq!(bins[2].n, 0);
        assert_eq!(bins[2].mean_predicted, None);
        assert_eq!(expected_calibration_error(&bins), 0.0);
    }

    #[test]
    fn display_tuple_shape() {
        let bin = CalibrationBin {
            lower: 0.0,
            upper: 0.2,
            n: 9,
            mean_predicted: Some(0.13),
            observed_fraction: Some(1.0 / 3.0),
        };
        assert_eq!(bin.to_string(), "(mean 0.13, n 9, observed 0.33)");
    }

    #[test]
    fn rejects_single_bin() {
        let c = ScoredCohort::from_scores(&[0.5], &[1]).unwrap();
        assert!(reliability_bins(&c, 1).is_err());
    }
}
