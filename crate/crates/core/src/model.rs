use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use respnet_autodiff::kernels::softmax_row;
use respnet_autodiff::{Graph, Var};
use serde::{Deserialize, Serialize};

use crate::aggregator::aggregate;
use crate::config::ModelConfig;
use crate::data::MaskVolume;
use crate::encoder::{cls_from_caches, frozen_prefix, SliceCache};
use crate::error::{CoreError, Result};
use crate::heads::{cls_head, proj_head};
use crate::params::{init_params, Bound, ParamStore};

/// A volume with its frozen-encoder output precomputed.
#[derive(Clone, Debug)]
pub struct PreparedVolume {
    pub patient_id: String,
    pub label: u8,
    pub cache: SliceCache,
}

/// Graph outputs for a batch of volumes.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[v × 2]`
    pub logits: Var,
    /// Unit-norm projections `[v × p]`.
    pub embeddings: Var,
    pub attention: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub patient_id: String,
    pub label: u8,
    pub probability: f64,
    pub embedding: Vec<f64>,
    pub attention: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// Volumes per graph during inference.
const PREDICT_CHUNK: usize = 32;

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { config, params })
    }

    pub fn prepare(&self, volume: &MaskVolume) -> Result<PreparedVolume> {
        volume.check_geometry(&self.config)?;
        Ok(PreparedVolume {
            patient_id: volume.patient_id.clone(),
            label: volume.label,
            cache: frozen_prefix(&volume.slices()?, &self.params, &self.config)?,
        })
    }

    pub fn prepare_all(&self, volumes: &[MaskVolume]) -> Result<Vec<PreparedVolume>> {
        volumes.iter().map(|v| self.prepare(v)).collect()
    }

    /// Logits, normalized projections and slice attention for `batch`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        p: &Bound,
        batch: &[&PreparedVolume],
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        let caches: Vec<&SliceCache> = batch.iter().map(|v| &v.cache).collect();
        let cls = cls_from_caches(g, &caches, p, &self.config)?;
        let (z, attention) = aggregate(g, cls, batch.len(), p, &self.config)?;
        let logits = cls_head(g, z, p, &self.config, training, rng)?;
        let proj = proj_head(g, z, p, &self.config)?;
        let embeddings = g.l2_normalize(proj)?;
        Ok(ForwardOutput {
            logits,
            embeddings,
            attention,
        })
    }

    /// Inference-mode predictions, in input order.
    pub fn predict(&self, volumes: &[PreparedVolume]) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(volumes.len());
        // Dropout is off, so this generator is never drawn from.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for chunk in volumes.chunks(PREDICT_CHUNK) {
            let mut g = Graph::new();
            let p = self.params.bind_frozen(&mut g);
            let refs: Vec<&PreparedVolume> = chunk.iter().collect();
            let f = self.forward(&mut g, &p, &refs, false, &mut rng)?;
            let logits = g.value(f.logits);
            let emb = g.value(f.embeddings);
            for (i, (v, attention)) in chunk.iter().zip(f.attention).enumerate() {
                let mut probs = [0.0; 2];
                softmax_row(logits.row(i), &mut probs);
                out.push(Prediction {
                    patient_id: v.patient_id.clone(),
                    label: v.label,
                    probability: probs[1],
                    embedding: emb.row(i).to_vec(),
                    attention,
                });
            }
        }
        Ok(out)
    }

    /// Verifies that `other` holds the same frozen parameters bitwise.
    pub fn frozen_params_match(&self, other: &Model) -> Result<bool> {
        if self.params.manifest() != other.params.manifest() {
            return Err(CoreError::Contract("parameter manifests differ".into()));
        }
        Ok(self
            .params
            .iter()
            .zip(other.params.iter())
            .filter(|((_, t), _)| !t.requires_grad())
            .all(|((_, a), (_, b))| {
                a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            }))
    }
}
