//! Mini-batch training with cross-entropy plus the contrastive term,
//! AdamW, cosine learning rate and early stopping on validation F1.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use respnet_autodiff::{Graph, Tensor, Var};
use respnet_eval::{confusion, point_metrics, roc_auc, ScoredCohort};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{CoreError, Result};
use crate::heads::{alpha_schedule, contrastive_loss_graph};
use crate::model::{Model, Prediction, PreparedVolume};
use crate::optim::{adamw_step, cosine_lr, AdamWConfig, OptimizerState};
use crate::pairs::{mine_hard_negatives, sample_positive_pairs, sample_random_pairs, PairBatch};

/// Decision threshold for the validation F1 tracked during training.
pub const VALIDATION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EarlyStop {
    pub stop: bool,
    pub best_epoch: usize,
}

/// Best epoch is the first strict maximum; stop once `patience` epochs
/// have passed without a strictly better score.
pub fn early_stop_check(history: &[f64], patience: usize) -> Result<EarlyStop> {
    if history.is_empty() {
        return Err(CoreError::Contract("early stopping needs at least one score".into()));
    }
    let best_epoch = history
        .iter()
        .enumerate()
        .fold(0, |best, (i, &s)| if s > history[best] { i } else { best });
    Ok(EarlyStop {
        stop: history.len() - 1 - best_epoch >= patience,
        best_epoch,
    })
}

/// How the contrastive pairs of one batch were built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    Random,
    HardNegatives,
}

/// Loss graph for one mini-batch.
pub struct BatchLoss {
    pub graph: Graph,
    pub loss: Var,
    /// One var per trainable parameter, canonical order.
    pub trainable: Vec<Var>,
    pub ce: f64,
    pub contrastive: Option<f64>,
    pub pairs: PairBatch,
    pub mode: PairMode,
}

fn pair_mode(epoch: usize, cfg: &TrainConfig) -> PairMode {
    if cfg.loss.hard_mining && epoch >= cfg.loss.hard_mining_start_epoch {
        PairMode::HardNegatives
    } else {
        PairMode::Random
    }
}

/// Forward pass and combined loss `CE + α·contrastive` for `batch`.
pub fn batch_loss(
    model: &Model,
    batch: &[&PreparedVolume],
    epoch: usize,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BatchLoss> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g);
    let trainable: Vec<Var> = model.params.trainable_positions().iter().map(|&i| p.vars()[i]).collect();
    let out = model.forward(&mut g, &p, batch, true, rng)?;
    let labels: Vec<u8> = batch.iter().map(|v| v.label).collect();
    let targets: Vec<usize> = labels.iter().map(|&y| usize::from(y)).collect();
    let per_volume = g.cross_entropy(out.logits, &targets)?;
    let ce = g.mean_all(per_volume)?;

    let mode = pair_mode(epoch, cfg);
    let pairs = match mode {
        PairMode::Random => sample_random_pairs(&labels, batch.len(), rng),
        PairMode::HardNegatives => {
            // The projection path has no dropout, so these rows equal the
            // inference-mode embeddings under the current parameters.
            let emb = g.value(out.embeddings);
            let rows: Vec<Vec<f64>> = (0..batch.len()).map(|i| emb.row(i).to_vec()).collect();
            let mut pairs = mine_hard_negatives(&rows, &labels);
            let n_pos = if pairs.is_empty() { batch.len() } else { pairs.len() };
            pairs.extend(sample_positive_pairs(&labels, n_pos, rng));
            pairs
        }
    };
    let sc = contrastive_loss_graph(&mut g, out.embeddings, &pairs, cfg.loss.margin)?;
    let alpha = alpha_schedule(epoch, &cfg.loss);
    let ce_value = g.data(ce)[0];
    let (loss, contrastive) = match sc {
        Some(sc) => {
            let weighted = g.scale(sc, alpha)?;
            (g.add(ce, weighted)?, Some(g.data(sc)[0]))
        }
        None => (ce, None),
    };
    Ok(BatchLoss {
        graph: g,
        loss,
        trainable,
        ce: ce_value,
        contrastive,
        pairs,
        mode,
    })
}

/// Gradients of a batch loss for every trainable parameter.
pub fn batch_gradients(b: &BatchLoss) -> Result<Vec<Tensor>> {
    let grads = b.graph.backward(b.loss)?;
    Ok(b.trainable.iter().map(|&v| grads.get(v)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub alpha: f64,
    pub mean_ce: f64,
    /// Mean over batches that had at least one pair.
    pub mean_contrastive: f64,
    pub random_pairs: usize,
    pub mined_pairs: usize,
    pub batches: usize,
}

fn adamw_config(cfg: &TrainConfig) -> AdamWConfig {
    AdamWConfig {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
        weight_decay: cfg.weight_decay,
    }
}

/// One pass over `data` in shuffled mini-batches, one optimizer step each.
pub fn train_epoch(
    model: &mut Model,
    data: &[PreparedVolume],
    epoch: usize,
    cfg: &TrainConfig,
    state: &mut OptimizerState,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(CoreError::Contract("training split is empty".into()));
    }
    let lr = cosine_lr(epoch, cfg.lr, cfg.max_epochs);
    let opt = adamw_config(cfg);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut stats = EpochStats {
        epoch,
        lr,
        alpha: alpha_schedule(epoch, &cfg.loss),
        mean_ce: 0.0,
        mean_contrastive: 0.0,
        random_pairs: 0,
        mined_pairs: 0,
        batches: 0,
    };
    let mut sc_batches = 0;
    for chunk in order.chunks(cfg.batch_size) {
        let batch: Vec<&PreparedVolume> = chunk.iter().map(|&i| &data[i]).collect();
        let b = batch_loss(model, &batch, epoch, cfg, rng)?;
        let grads = batch_gradients(&b)?;
        adamw_step(&mut model.params, &grads, state, lr, &opt)?;
        stats.batches += 1;
        stats.mean_ce += b.ce;
        if let Some(sc) = b.contrastive {
            stats.mean_contrastive += sc;
            sc_batches += 1;
        }
        match b.mode {
            PairMode::Random => stats.random_pairs += b.pairs.len(),
            PairMode::HardNegatives => {
                let neg = b.pairs.len() - b.pairs.positives();
                stats.mined_pairs += neg;
                stats.random_pairs += b.pairs.positives();
            }
        }
    }
    stats.mean_ce /= stats.batches as f64;
    if sc_batches > 0 {
        stats.mean_contrastive /= sc_batches as f64;
    }
    Ok(stats)
}

/// Validation summary at the fixed 0.5 threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationScore {
    pub f1: f64,
    pub auc: Option<f64>,
    pub mean_ce: f64,
}

pub fn cohort_of(preds: &[Prediction]) -> Result<ScoredCohort> {
    let patients = preds
        .iter()
        .map(|p| respnet_eval::ScoredPatient {
            id: p.patient_id.clone(),
            probability: p.probability,
            label: p.label,
        })
        .collect();
    Ok(ScoredCohort::new(patients)?)
}

pub fn validation_score(preds: &[Prediction]) -> Result<ValidationScore> {
    let cohort = cohort_of(preds)?;
    let f1 = point_metrics(&confusion(&cohort, VALIDATION_THRESHOLD)).f1;
    let auc = roc_auc(&cohort).ok();
    let mean_ce = preds
        .iter()
        .map(|p| {
            let q = if p.label == 1 { p.probability } else { 1.0 - p.probability };
            -q.max(f64::MIN_POSITIVE).ln()
        })
        .sum::<f64>()
        / preds.len() as f64;
    Ok(ValidationScore { f1, auc, mean_ce })
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    #[serde(flatten)]
    pub train: EpochStats,
    pub val_f1: f64,
    pub val_auc: Option<f64>,
    pub val_ce: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Parameters restored from the best validation epoch.
    pub model: Model,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub stopped_early: bool,
}

/// Generator stream used for shuffling, dropout and pair sampling.
const TRAIN_STREAM: u64 = 2;

/// Trains until `max_epochs` or early stopping, then restores the
/// parameters of the best validation epoch.
pub fn fit(mut model: Model, train: &[PreparedVolume], val: &[PreparedVolume], cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    let train_ids: HashSet<&str> = train.iter().map(|v| v.patient_id.as_str()).collect();
    if let Some(v) = val.iter().find(|v| train_ids.contains(v.patient_id.as_str())) {
        return Err(CoreError::Contract(format!("patient {} is in both training and validation", v.patient_id)));
    }
    if val.is_empty() {
        return Err(CoreError::Contract("validation split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TRAIN_STREAM);
    let mut state = OptimizerState::new(&model.params);
    let mut log = Vec::new();
    let mut history = Vec::new();
    let mut best = model.params.clone();
    let mut stopped_early = false;
    for epoch in 0..cfg.max_epochs {
        let train_stats = train_epoch(&mut model, train, epoch, cfg, &mut state, &mut rng)?;
        let score = validation_score(&model.predict(val)?)?;
        history.push(score.f1);
        log.push(EpochRecord {
            train: train_stats,
            val_f1: score.f1,
            val_auc: score.auc,
            val_ce: score.mean_ce,
        });
        let check = early_stop_check(&history, cfg.patience)?;
        if check.best_epoch == epoch {
            best = model.params.clone();
        }
        if check.stop {
            stopped_early = true;
            break;
        }
    }
    let check = early_stop_check(&history, cfg.patience)?;
    model.params = best;
    Ok(FitResult {
        model,
        best_val_f1: history[check.best_epoch],
        best_epoch: check.best_epoch,
        log,
        stopped_early,
    })
}

/// Writes one JSON object per epoch.
pub fn write_log_jsonl(path: impl AsRef<Path>, log: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    for r in log {
        let line = serde_json::to_string(r)?;
        writeln!(f, "{line}").map_err(|e| CoreError::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_examples() {
        let rising: Vec<f64> = (0..50).map(|i| i as f64).collect();
        for n in 1..=rising.len() {
            assert!(!early_stop_check(&rising[..n], 10).unwrap().stop);
        }
        assert_eq!(
            early_stop_check(&[0.7, 0.6, 0.6, 0.6], 3).unwrap(),
            EarlyStop { stop: true, best_epoch: 0 }
        );
        assert_eq!(
            early_stop_check(&[0.5, 0.8, 0.7, 0.9], 2).unwrap(),
            EarlyStop { stop: false, best_epoch: 3 }
        );
        assert_eq!(early_stop_check(&[0.5, 0.5, 0.5], 5).unwrap().best_epoch, 0);
        assert!(early_stop_check(&[], 3).is_err());
    }
}
