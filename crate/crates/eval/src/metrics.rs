use serde::{Deserialize, Serialize};

use crate::cohort::ScoredCohort;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.r#fn
    }
}

/// Tallies predictions, calling a patient positive iff `probability >= threshold`.
pub fn confusion(cohort: &ScoredCohort, threshold: f64) -> ConfusionMatrix {
    confusion_from(cohort.patients().iter().map(|p| (p.probability, p.label)), threshold)
}

pub(crate) fn confusion_from(scored: impl Iterator<Item = (f64, u8)>, threshold: f64) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for (p, y) in scored {
        match (p >= threshold, y == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.r#fn += 1,
        }
    }
    cm
}

/// Which ratios had a zero denominator and were reported as 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateFlags {
    pub accuracy: bool,
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

impl DegenerateFlags {
    pub fn any(&self) -> bool {
        self.accuracy || self.precision || self.recall || self.f1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: DegenerateFlags,
}

fn ratio(num: f64, den: f64, flag: &mut bool) -> f64 {
    if den == 0.0 {
        *flag = true;
        0.0
    } else {
        num / den
    }
}

/// Accuracy, precision, recall and F1. F1 is the harmonic mean of
/// precision and recall as computed here, not the count form.
pub fn point_metrics(cm: &ConfusionMatrix) -> PointMetrics {
    let (tp, fp, tn, fneg) = (cm.tp as f64, cm.fp as f64, cm.tn as f64, cm.r#fn as f64);
    let mut degenerate = DegenerateFlags::default();
    let accuracy = ratio(tp + tn, tp + tn + fp + fneg, &mut degenerate.accuracy);
    let precision = ratio(tp, tp + fp, &mut degenerate.precision);
    let recall = ratio(tp, tp + fneg, &mut degenerate.recall);
    let f1 = ratio(2.0 * precision * recall, precision + recall, &mut degenerate.f1);
    PointMetrics {
        accuracy,
        precision,
        recall,
        f1,
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(tp: usize, fp: usize, tn: usize, fneg: usize) -> ConfusionMatrix {
        ConfusionMatrix { tp, fp, tn, r#fn: fneg }
    }

    #[test]
    fn confusion_examples() {
        let c = ScoredCohort::from_scores(&[0.9, 0.2, 0.4, 0.7], &[1, 0, 1, 0]).unwrap();
        let all = confusion(&c, 0.0);
        assert_eq!((all.r#fn, all.tn), (0, 0));
        let none = confusion(&c, 0.9 + 1e-9);
        assert_eq!((none.tp, none.fp), (0, 0));
        let two = ScoredCohort::from_scores(&[0.9, 0.2], &[1, 0]).unwrap();
        assert_eq!(confusion(&two, 0.5), cm(1, 0, 1, 0));
    }

    #[test]
    fn published_columns_round_as_printed() {
        let m = point_metrics(&cm(21, 5, 15, 13));
        assert_eq!(
            [m.precision, m.recall, m.accuracy, m.f1].map(|v| format!("{v:.2}")),
            ["0.81", "0.62", "0.67", "0.70"]
        );
        let m = point_metrics(&cm(31, 15, 5, 3));
        assert_eq!(
            [m.recall, m.precision, m.f1, m.accuracy].map(|v| format!("{v:.2}")),
            ["0.91", "0.67", "0.78", "0.67"]
        );
    }

    #[test]
    fn perfect_and_degenerate() {
        let m = point_metrics(&cm(10, 0, 0, 0));
        assert_eq!([m.accuracy, m.precision, m.recall, m.f1], [1.0; 4]);
        assert!(!m.degenerate.any());

        let m = point_metrics(&cm(0, 0, 5, 5));
        assert_eq!(m.precision, 0.0);
        assert!(m.degenerate.precision && m.degenerate.f1 && !m.degenerate.recall);
        let m = point_metrics(&ConfusionMatrix::default());
        assert!(m.degenerate.accuracy);
    }
}
