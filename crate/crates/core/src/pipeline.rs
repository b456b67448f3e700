//! End-to-end glue: one JSON run configuration, dataset generation,
//! training and evaluation with a validation-selected threshold.

use std::path::{Path, PathBuf};

use respnet_eval::{build_report, select_threshold, AttentionRecord, Baseline, MetricsReport, ReportOptions, ScoredCohort};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::data::{generate_synthetic, split_dataset, DatasetManifest, MaskVolume, Split, SynthConfig};
use crate::error::Result;
use crate::model::{Model, PreparedVolume};
use crate::trainer::{cohort_of, fit, FitResult};

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.6, 0.2, 0.2];

/// Learning rate for the toy geometry. At 1e-4 the trainable heads barely
/// move within the epoch budget and validation F1 stays at the
/// all-positive level until early stopping fires.
pub const DESK_LR: f64 = 3e-3;
pub const DESK_PATIENCE: usize = 25;

/// Training defaults for synthetic desk-scale runs.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        lr: DESK_LR,
        patience: DESK_PATIENCE,
        ..TrainConfig::default()
    }
}

/// Every knob of a run; missing sections take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub split_fractions: [f64; 3],
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub report: ReportOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            split_fractions: DEFAULT_FRACTIONS,
            model: ModelConfig::default(),
            train: desk_train_config(),
            report: ReportOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::CoreError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Overrides every seed with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.train.seed = seed;
        self.report.seed = seed;
        self
    }
}

/// Generates a synthetic cohort, writes it under `dir` and assigns splits.
pub fn generate_dataset(dir: &Path, cfg: &RunConfig) -> Result<(DatasetManifest, PathBuf)> {
    let volumes = generate_synthetic(&cfg.synth)?;
    let manifest = DatasetManifest::write_volumes(dir, &volumes, Some(cfg.synth.clone()))?;
    let manifest = split_dataset(&manifest, cfg.split_fractions, cfg.synth.seed)?;
    let path = manifest.save(dir)?;
    Ok((manifest, path))
}

/// Volumes of a loaded dataset, by split.
#[derive(Clone, Debug)]
pub struct SplitVolumes {
    pub train: Vec<MaskVolume>,
    pub val: Vec<MaskVolume>,
    pub test: Vec<MaskVolume>,
}

impl SplitVolumes {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let (m, dir) = DatasetManifest::load(manifest_path)?;
        Ok(Self {
            train: m.load_split(&dir, Split::Train)?,
            val: m.load_split(&dir, Split::Val)?,
            test: m.load_split(&dir, Split::Test)?,
        })
    }

    pub fn get(&self, split: Split) -> &[MaskVolume] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Initializes a model from `cfg.model` and fits it on the train split,
/// early-stopping on the validation split.
pub fn train_model(data: &SplitVolumes, cfg: &RunConfig) -> Result<FitResult> {
    let model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    let train = model.prepare_all(&data.train)?;
    let val = model.prepare_all(&data.val)?;
    fit(model, &train, &val, &cfg.train)
}

/// Probabilities and slice attention for a set of volumes.
pub fn score(model: &Model, volumes: &[MaskVolume]) -> Result<(ScoredCohort, Vec<AttentionRecord>)> {
    let prepared: Vec<PreparedVolume> = model.prepare_all(volumes)?;
    let preds = model.predict(&prepared)?;
    let attention = preds
        .iter()
        .map(|p| AttentionRecord {
            patient_id: p.patient_id.clone(),
            weights: p.attention.clone(),
        })
        .collect();
    Ok((cohort_of(&preds)?, attention))
}

/// A model's scores on the evaluated split and its validation threshold.
#[derive(Clone, Debug)]
pub struct ScoredModel {
    pub name: String,
    pub threshold: f64,
    pub cohort: ScoredCohort,
    pub attention: Vec<AttentionRecord>,
}

/// Picks the F1-optimal threshold on validation, then scores `split`.
pub fn score_with_threshold(name: &str, model: &Model, data: &SplitVolumes, split: Split) -> Result<ScoredModel> {
    let (val, _) = score(model, &data.val)?;
    let threshold = select_threshold(&val)?.threshold;
    let (cohort, attention) = score(model, data.get(split))?;
    Ok(ScoredModel {
        name: name.to_string(),
        threshold,
        cohort,
        attention,
    })
}

/// Full report for `main`, optionally compared against `baseline` on the
/// same patients.
pub fn evaluation_report(main: &ScoredModel, baseline: Option<&ScoredModel>, opts: &ReportOptions) -> Result<MetricsReport> {
    let aligned;
    let baselines: Vec<Baseline> = match baseline {
        Some(b) => {
            aligned = main.cohort.align(&b.cohort)?;
            vec![Baseline {
                name: &b.name,
                cohort: &aligned,
                threshold: b.threshold,
            }]
        }
        None => Vec::new(),
    };
    Ok(build_report(&main.name, &main.cohort, main.threshold, &baselines, &main.attention, opts)?)
}
