//! Assembled evaluation report and its JSON / text renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attention::{export_attention, AttentionExport, AttentionRecord};
use crate::bootstrap::{bootstrap_metrics, paired_bootstrap, resample_indices, Interval, Metric, PairedBootstrap};
use crate::buckets::{confidence_buckets, ConfidenceBuckets};
use crate::calibration::{expected_calibration_error, reliability_bins, CalibrationBin};
use crate::cohort::ScoredCohort;
use crate::delong::{delong_test, DelongResult};
use crate::error::Result;
use crate::metrics::{confusion, confusion_from, point_metrics, ConfusionMatrix, DegenerateFlags, PointMetrics};

/// Significant digits kept for every float in the JSON report.
pub const JSON_SIG_DIGITS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    pub resamples: usize,
    pub seed: u64,
    pub calibration_bins: usize,
    pub low_band: f64,
    pub high_band: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            resamples: crate::bootstrap::DEFAULT_RESAMPLES,
            seed: 0,
            calibration_bins: crate::calibration::DEFAULT_BINS,
            low_band: crate::buckets::DEFAULT_LOW_BAND,
            high_band: crate::buckets::DEFAULT_HIGH_BAND,
        }
    }
}

/// `point` is the bootstrap median, so `ci_low <= point <= ci_high` always
/// holds; `observed` is the value on the full cohort.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub observed: f64,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl MetricEstimate {
    fn new(observed: f64, interval: Interval) -> Self {
        Self {
            observed,
            point: interval.median,
            ci_low: interval.low,
            ci_high: interval.high,
        }
    }
}

/// Observed confusion counts with bootstrap 95% intervals per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionEstimate {
    pub observed: ConfusionMatrix,
    pub tp_ci: [f64; 2],
    pub fp_ci: [f64; 2],
    pub tn_ci: [f64; 2],
    pub fn_ci: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub baseline: String,
    pub baseline_threshold: f64,
    pub delong: DelongResult,
    pub bootstrap: Vec<PairedBootstrap>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub n_patients: usize,
    pub n_positive: usize,
    pub threshold: f64,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    pub confusion: ConfusionEstimate,
    pub accuracy: MetricEstimate,
    pub precision: MetricEstimate,
    pub recall: MetricEstimate,
    pub f1: MetricEstimate,
    pub roc_auc: MetricEstimate,
    pub degenerate: DegenerateFlags,
    pub comparisons: Vec<ModelComparison>,
    pub calibration: Vec<CalibrationBin>,
    pub expected_calibration_error: f64,
    pub confidence_buckets: ConfidenceBuckets,
    pub attention: Vec<AttentionExport>,
}

/// A competing model scored on the same patients.
pub struct Baseline<'a> {
    pub name: &'a str,
    pub cohort: &'a ScoredCohort,
    pub threshold: f64,
}

pub fn build_report(
    model: &str,
    cohort: &ScoredCohort,
    threshold: f64,
    baselines: &[Baseline<'_>],
    attention: &[AttentionRecord],
    opts: &ReportOptions,
) -> Result<MetricsReport> {
    cohort.require_both_classes()?;
    let cm = confusion(cohort, threshold);
    let pm = point_metrics(&cm);
    let boot = bootstrap_metrics(cohort, &Metric::ALL, threshold, opts.resamples, opts.seed)?;
    let estimate = |m: Metric| {
        let s = boot.iter().find(|s| s.metric == m).expect("metric bootstrapped");
        MetricEstimate::new(s.observed, s.interval)
    };

    let comparisons = baselines
        .iter()
        .map(|b| {
            Ok(ModelComparison {
                baseline: b.name.to_string(),
                baseline_threshold: b.threshold,
                delong: delong_test(cohort, b.cohort)?,
                bootstrap: Metric::ALL
                    .iter()
                    .map(|&m| paired_bootstrap(cohort, b.cohort, m, threshold, b.threshold, opts.resamples, opts.seed))
                    .collect::<Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let calibration = reliability_bins(cohort, opts.calibration_bins)?;
    Ok(MetricsReport {
        model: model.to_string(),
        n_patients: cohort.len(),
        n_positive: cohort.class_counts().1,
        threshold,
        bootstrap_resamples: opts.resamples,
        bootstrap_seed: opts.seed,
        confusion: confusion_estimate(cohort, threshold, opts)?,
        accuracy: estimate(Metric::Accuracy),
        precision: estimate(Metric::Precision),
        recall: estimate(Metric::Recall),
        f1: estimate(Metric::F1),
        roc_auc: estimate(Metric::RocAuc),
        degenerate: pm.degenerate,
        comparisons,
        expected_calibration_error: expected_calibration_error(&calibration),
        calibration,
        confidence_buckets: confidence_buckets(cohort, threshold, opts.low_band, opts.high_band)?,
        attention: export_attention(attention)?,
    })
}

fn confusion_estimate(cohort: &ScoredCohort, threshold: f64, opts: &ReportOptions) -> Result<ConfusionEstimate> {
    let labels = cohort.labels();
    let pats = cohort.patients();
    let mut cells: [Vec<f64>; 4] = Default::default();
    for r in 0..opts.resamples as u64 {
        let idx = resample_indices(&labels, opts.seed, r)?;
        let cm = confusion_from(idx.iter().map(|&i| (pats[i].probability, pats[i].label)), threshold);
        for (cell, v) in cells.iter_mut().zip([cm.tp, cm.fp, cm.tn, cm.r#fn]) {
            cell.push(v as f64);
        }
    }
    let ci = |s: &[f64]| {
        let iv = Interval::from_samples(s);
        [iv.low, iv.high]
    };
    Ok(ConfusionEstimate {
        observed: confusion(cohort, threshold),
        tp_ci: ci(&cells[0]),
        fp_ci: ci(&cells[1]),
        tn_ci: ci(&cells[2]),
        fn_ci: ci(&cells[3]),
    })
}

/// Rounds `x` to `digits` significant decimal digits.
pub fn round_significant(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x).parse().expect("formatted float parses")
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let r = round_significant(n.as_f64().expect("f64 number"), JSON_SIG_DIGITS);
            *v = serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to [`JSON_SIG_DIGITS`] significant digits.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    Ok(serde_json::to_string_pretty(&v)?)
}

/// Table-style block of point metrics, two decimals.
pub fn render_point_metrics(cm: &ConfusionMatrix) -> String {
    let m: PointMetrics = point_metrics(cm);
    let mut s = String::new();
    let _ = writeln!(s, "True Positives   {}", cm.tp);
    let _ = writeln!(s, "False Positives  {}", cm.fp);
    let _ = writeln!(s, "True Negatives   {}", cm.tn);
    let _ = writeln!(s, "False Negatives  {}", cm.r#fn);
    let _ = writeln!(s, "Accuracy         {:.2}", m.accuracy);
    let _ = writeln!(s, "Precision        {:.2}", m.precision);
    let _ = writeln!(s, "Recall           {:.2}", m.recall);
    let _ = writeln!(s, "F1 Score         {:.2}", m.f1);
    if m.degenerate.any() {
        let _ = writeln!(s, "(zero-denominator metrics reported as 0: {:?})", m.degenerate);
    }
    s
}

fn fmt_estimate(e: &MetricEstimate) -> String {
    format!("{:.2} ({:.2}-{:.2})", e.point, e.ci_low, e.ci_high)
}

/// Human-readable summary. Values are bootstrap medians with 95% intervals,
/// rounded to two decimals; counts are observed.
pub fn render_summary(r: &MetricsReport) -> String {
    let mut s = String::new();
    let c = &r.confusion;
    let _ = writeln!(s, "Model: {}  (n = {}, positives = {}, threshold = {:.2})", r.model, r.n_patients, r.n_positive, r.threshold);
    let _ = writeln!(s, "Confusion matrix (observed counts, bootstrap 95% CI)");
    for (name, v, ci) in [
        ("True Positives", c.observed.tp, c.tp_ci),
        ("False Positives", c.observed.fp, c.fp_ci),
        ("True Negatives", c.observed.tn, c.tn_ci),
        ("False Negatives", c.observed.r#fn, c.fn_ci),
    ] {
        let _ = writeln!(s, "  {name:<16} {v} ({:.0}-{:.0})", ci[0], ci[1]);
    }
    let _ = writeln!(s, "Classification metrics (median, 95% CI)");
    for (name, e) in [
        ("ROC-AUC", &r.roc_auc),
        ("Accuracy", &r.accuracy),
        ("Precision", &r.precision),
        ("Recall", &r.recall),
        ("F1 Score", &r.f1),
    ] {
        let _ = writeln!(s, "  {name:<16} {}", fmt_estimate(e));
    }
    for cmp in &r.comparisons {
        let _ = writeln!(
            s,
            "vs {}: dAUC {:+.2}, DeLong p = {:.3}",
            cmp.baseline, cmp.delong.delta_auc, cmp.delong.p_value
        );
        for b in &cmp.bootstrap {
            let _ = writeln!(s, "  {:<10} diff {:+.2} ({:+.2} to {:+.2}), p = {:.3}", b.metric.name(), b.difference.median, b.difference.low, b.difference.high, b.p_value);
        }
    }
    let _ = writeln!(s, "Calibration (ECE {:.2})", r.expected_calibration_error);
    for b in r.calibration.iter().filter(|b| b.n > 0) {
        let _ = writeln!(s, "  [{:.2}, {:.2}) {b}", b.lower, b.upper);
    }
    let cb = &r.confidence_buckets;
    let _ = writeln!(
        s,
        "Confidence buckets: uncertain-correct {}, uncertain-wrong {}, confident-correct {}, confident-wrong {}, mid-band {}",
        cb.uncertain_correct.len(),
        cb.uncertain_wrong.len(),
        cb.confident_correct.len(),
        cb.confident_wrong.len(),
        cb.mid_band.len()
    );
    if !cb.confident_wrong.is_empty() {
        let _ = writeln!(s, "  confident-wrong: {}", cb.confident_wrong.join(", "));
    }
    if !r.attention.is_empty() {
        let mean_entropy = r.attention.iter().map(|a| a.entropy).sum::<f64>() / r.attention.len() as f64;
        let _ = writeln!(s, "Attention: {} volumes, mean entropy {:.2} nats", r.attention.len(), mean_entropy);
    }
    s
}
