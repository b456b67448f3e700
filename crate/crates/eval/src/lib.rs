//! Evaluation statistics for binary classifiers scored as class-1
//! probabilities: confusion-matrix metrics, ROC-AUC with a pairwise oracle,
//! F1-optimal threshold selection, DeLong's test, paired stratified
//! bootstrap, reliability bins, confidence buckets and attention summaries.

pub mod attention;
pub mod bootstrap;
pub mod buckets;
pub mod calibration;
pub mod cohort;
pub mod delong;
pub mod error;
pub mod metrics;
pub mod report;
pub mod roc;
pub mod threshold;

pub use attention::{export_attention, AttentionExport, AttentionRecord};
pub use bootstrap::{bootstrap_metrics, paired_bootstrap, resample_indices, Interval, Metric, PairedBootstrap};
pub use buckets::{confidence_buckets, ConfidenceBuckets};
pub use calibration::{reliability_bins, CalibrationBin};
pub use cohort::{ScoredCohort, ScoredPatient};
pub use delong::{auc_variance, delong_test, DelongResult};
pub use error::{EvalError, Result};
pub use metrics::{confusion, point_metrics, ConfusionMatrix, DegenerateFlags, PointMetrics};
pub use report::{build_report, render_point_metrics, render_summary, to_json_string, Baseline, MetricsReport, ReportOptions};
pub use roc::{pairwise_auc, roc_auc, roc_curve, RocPoint};
pub use threshold::{select_threshold, ThresholdChoice};
