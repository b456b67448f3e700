use crate::cohort::ScoredCohort;
use crate::error::Result;
use crate::metrics::{confusion, point_metrics};

/// Candidate cut points: 0, the midpoints between adjacent distinct
/// probabilities, and 1, in ascending order.
pub fn candidate_thresholds(cohort: &ScoredCohort) -> Vec<f64> {
    let mut probs = cohort.probabilities();
    probs.sort_by(f64::total_cmp);
    probs.dedup();
    let mut out = Vec::with_capacity(probs.len() + 1);
    out.push(0.0);
    out.extend(probs.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out.push(1.0);
    out.dedup();
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub f1: f64,
}

/// F1-maximising threshold over [`candidate_thresholds`]; the lowest wins
/// among equal F1 values.
pub fn select_threshold(cohort: &ScoredCohort) -> Result<ThresholdChoice> {
    cohort.require_both_classes()?;
    let mut best: Option<ThresholdChoice> = None;
    for t in candidate_thresholds(cohort) {
        let f1 = point_metrics(&confusion(cohort, t)).f1;
        if best.is_none_or(|b| f1 > b.f1) {
            best = Some(ThresholdChoice { threshold: t, f1 });
        }
    }
    Ok(best.expect("at least two candidates"))
}
