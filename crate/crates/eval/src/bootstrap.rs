//! Paired stratified bootstrap.
//!
//! Resample `b` draws patients with replacement separately within each true
//! class, so every resample keeps the original class counts. The generator
//! for resample `b` is ChaCha8 seeded with `seed` on stream `b`, which makes
//! each resample independent of scheduling and lets resamples run in
//! parallel without changing results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::ScoredCohort;
use crate::error::{EvalError, Result};
use crate::metrics::{confusion_from, point_metrics};

pub const DEFAULT_RESAMPLES: usize = 2000;
pub const MIN_RESAMPLES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Precision,
    Recall,
    F1,
    RocAuc,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Accuracy, Metric::Precision, Metric::Recall, Metric::F1, Metric::RocAuc];
    pub const THRESHOLDED: [Metric; 4] = [Metric::Accuracy, Metric::Precision, Metric::Recall, Metric::F1];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::RocAuc => "roc_auc",
        }
    }
}

/// Evaluates `metric` on the patients at `indices` (repeats allowed).
pub fn metric_on(cohort: &ScoredCohort, indices: &[usize], metric: Metric, threshold: f64) -> Result<f64> {
    let pats = cohort.patients();
    if metric == Metric::RocAuc {
        return crate::roc::roc_auc(&cohort.subset(indices));
    }
    let cm = confusion_from(indices.iter().map(|&i| (pats[i].probability, pats[i].label)), threshold);
    let m = point_metrics(&cm);
    Ok(match metric {
        Metric::Accuracy => m.accuracy,
        Metric::Precision => m.precision,
        Metric::Recall => m.recall,
        Metric::F1 => m.f1,
        Metric::RocAuc => unreachable!(),
    })
}

/// Positions of each class, (negatives, positives).
fn strata(labels: &[u8]) -> (Vec<usize>, Vec<usize>) {
    let mut neg = Vec::new();
    let mut pos = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        if y == 1 {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    (neg, pos)
}

/// Patient positions drawn for resample `index`.
pub fn resample_indices(labels: &[u8], seed: u64, index: u64) -> Result<Vec<usize>> {
    let (neg, pos) = strata(labels);
    if neg.is_empty() || pos.is_empty() {
        return Err(EvalError::Contract("stratified bootstrap needs both classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut out = Vec::with_capacity(labels.len());
    for stratum in [&neg, &pos] {
        out.extend((0..stratum.len()).map(|_| stratum[rng.random_range(0..stratum.len())]));
    }
    Ok(out)
}

/// Median and two-sided percentile interval of a bootstrap distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub median: f64,
    pub low: f64,
    pub high: f64,
}

/// Linear-interpolation percentile (`q` in `[0, 1]`) of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Interval {
    /// 95% percentile interval around the median.
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            median: percentile(&s, 0.5),
            low: percentile(&s, 0.025),
            high: percentile(&s, 0.975),
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.low <= v && v <= self.high
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub metric: Metric,
    pub resamples: usize,
    pub observed: f64,
    pub interval: Interval,
}

/// Bootstrap distribution of several metrics for one model.
pub fn bootstrap_metrics(
    cohort: &ScoredCohort,
    metrics: &[Metric],
    threshold: f64,
    resamples: usize,
    seed: u64,
) -> Result<Vec<BootstrapSummary>> {
    check_resamples(resamples)?;
    let labels = cohort.labels();
    let all: Vec<usize> = (0..cohort.len()).collect();
    let draws = (0..resamples as u64)
        .into_par_iter()
        .map(|b| {
            let idx = resample_indices(&labels, seed, b)?;
            metrics.iter().map(|&m| metric_on(cohort, &idx, m, threshold)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    metrics
        .iter()
        .enumerate()
        .map(|(k, &metric)| {
            let samples: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            Ok(BootstrapSummary {
                metric,
                resamples,
                observed: metric_on(cohort, &all, metric, threshold)?,
                interval: Interval::from_samples(&samples),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedBootstrap {
    pub metric: Metric,
    pub resamples: usize,
    pub a: Interval,
    pub b: Interval,
    /// Distribution of `metric(a) − metric(b)`.
    pub difference: Interval,
    pub p_value: f64,
}

fn check_resamples(resamples: usize) -> Result<()> {
    if resamples < MIN_RESAMPLES {
        return Err(EvalError::Parameter(format!(
            "bootstrap needs at least {MIN_RESAMPLES} resamples, got {resamples}"
        )));
    }
    Ok(())
}

/// Paired comparison of two models scored on the same patients. Both models
/// are evaluated on identical resamples at their own fixed thresholds. The
/// two-sided p-value is `2·min(P(diff ≤ 0), P(diff ≥ 0))` with add-one
/// smoothing, capped at 1.
#[allow(clippy::too_many_arguments)]
pub fn paired_bootstrap(
    a: &ScoredCohort,
    b: &ScoredCohort,
    metric: Metric,
    threshold_a: f64,
    threshold_b: f64,
    resamples: usize,
    seed: u64,
) -> Result<PairedBootstrap> {
    check_resamples(resamples)?;
    let b = a.align(b)?;
    let labels = a.labels();
    let pairs = (0..resamples as u64)
        .into_par_iter()
        .map(|r| {
            let idx = resample_indices(&labels, seed, r)?;
            Ok((metric_on(a, &idx, metric, threshold_a)?, metric_on(&b, &idx, metric, threshold_b)?))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let va: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let vb: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let le = diff.iter().filter(|d| **d <= 0.0).count();
    let ge = diff.iter().filter(|d| **d >= 0.0).count();
    let n1 = (resamples + 1) as f64;
    let p_value = (2.0 * ((le + 1) as f64 / n1).min((ge + 1) as f64 / n1)).min(1.0);
    Ok(PairedBootstrap {
        metric,
        resamples,
        a: Interval::from_samples(&va),
        b: Interval::from_samples(&vb),
        difference: Interval::from_samples(&diff),
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cohort() -> ScoredCohort {
        let probs: Vec<f64> = (0..40).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
        let labels: Vec<u8> = (0..40).map(|i| u8::from(i % 3 == 0)).collect();
        ScoredCohort::from_scores(&probs, &labels).unwrap()
    }

    #[test]
    fn resamples_preserve_class_counts() {
        let c = cohort();
        let labels = c.labels();
        let (neg, pos) = c.class_counts();
        for r in 0..200 {
            let idx = resample_indices(&labels, 9, r).unwrap();
            let p = idx.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!((idx.len() - p, p), (neg, pos));
        }
    }

    #[test]
    fn reproducible_under_seed() {
        let c = cohort();
        let a = bootstrap_metrics(&c, &Metric::ALL, 0.5, 300, 17).unwrap();
        let b = bootstrap_metrics(&c, &Metric::ALL, 0.5, 300, 17).unwrap();
        assert_eq!(a, b);
        let other = bootstrap_metrics(&c, &Metric::ALL, 0.5, 300, 18).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn constant_metric_has_degenerate_interval() {
        // perfectly separated: every resample has AUC 1 and F1 1
        let c = ScoredCohort::from_scores(&[0.1, 0.2, 0.3, 0.7, 0.8, 0.9], &[0, 0, 0, 1, 1, 1]).unwrap();
        for s in bootstrap_metrics(&c, &[Metric::RocAuc, Metric::F1], 0.5, 200, 1).unwrap() {
            assert_eq!((s.interval.low, s.interval.median, s.interval.high), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn identical_models_difference_is_zero() {
        let c = cohort();
        for m in Metric::ALL {
            let r = paired_bootstrap(&c, &c, m, 0.5, 0.5, 200, 3).unwrap();
            assert!(r.difference.contains(0.0));
            assert_eq!(r.p_value, 1.0);
        }
    }

    #[test]
    fn too_few_resamples_rejected() {
        let c = cohort();
        assert!(matches!(
            bootstrap_metrics(&c, &[Metric::F1], 0.5, 10, 0),
            Err(EvalError::Parameter(_))
        ));
    }

    #[test]
    fn percentile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&s, 0.5), 2.0);
        assert_eq!(percentile(&s, 0.1), 0.4);
    }
}
