use serde::{Deserialize, Serialize};

use crate::cohort::ScoredCohort;
use crate::error::{EvalError, Result};

pub const DEFAULT_LOW_BAND: f64 = 0.1;
pub const DEFAULT_HIGH_BAND: f64 = 0.25;

/// Patient ids split by correctness and by distance `|p − threshold|`
/// from the decision threshold.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBuckets {
    pub threshold: f64,
    pub low_band: f64,
    pub high_band: f64,
    pub uncertain_correct: Vec<String>,
    pub uncertain_wrong: Vec<String>,
    pub confident_correct: Vec<String>,
    pub confident_wrong: Vec<String>,
    /// Confidence in `[low_band, high_band)`.
    pub mid_band: Vec<String>,
}

impl ConfidenceBuckets {
    pub fn total(&self) -> usize {
        self.uncertain_correct.len()
            + self.uncertain_wrong.len()
            + self.confident_correct.len()
            + self.confident_wrong.len()
            + self.mid_band.len()
    }
}

pub fn confidence_buckets(
    cohort: &ScoredCohort,
    threshold: f64,
    low_band: f64,
    high_band: f64,
) -> Result<ConfidenceBuckets> {
    if !(0.0 <= low_band && low_band <= high_band) {
        return Err(EvalError::Parameter(format!(
            "bands must satisfy 0 <= low <= high, got low={low_band}, high={high_band}"
        )));
    }
    let mut out = ConfidenceBuckets {
        threshold,
        low_band,
        high_band,
        ..Default::default()
    };
    for p in cohort.patients() {
        let confidence = (p.probability - threshold).abs();
        let correct = (p.probability >= threshold) == (p.label == 1);
        let bucket = if confidence < low_band {
            if correct { &mut out.uncertain_correct } else { &mut out.uncertain_wrong }
        } else if confidence >= high_band {
            if correct { &mut out.confident_correct } else { &mut out.confident_wrong }
        } else {
            &mut out.mid_band
        };
        bucket.push(p.id.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let c = ScoredCohort::from_scores(&[0.5, 0.99, 0.9, 0.62, 0.05], &[1, 0, 1, 1, 0]).unwrap();
        let b = confidence_buckets(&c, 0.5, 0.1, 0.3).unwrap();
        assert_eq!(b.uncertain_correct, vec!["p0000"]);
        assert_eq!(b.confident_wrong, vec!["p0001"]);
        assert_eq!(b.confident_correct, vec!["p0002", "p0004"]);
        assert_eq!(b.mid_band, vec!["p0003"]);
        assert_eq!(b.total(), c.len());
    }

    #[test]
    fn rejects_inverted_bands() {
        let c = ScoredCohort::from_scores(&[0.5], &[1]).unwrap();
        assert!(confidence_buckets(&c, 0.5, 0.3, 0.1).is_err());
    }
}
