//! Volume aggregation: stacked slice CLS descriptors, slice-axis positional
//! embedding, self-attention pooling and mean pooling.

use respnet_autodiff::{Graph, Tensor, Var};
use respnet_eval::AttentionRecord;

use crate::config::ModelConfig;
use crate::data::MaskVolume;
use crate::encoder::{cls_from_caches, frozen_prefix, SliceTokens};
use crate::error::{CoreError, Result};
use crate::layers::{layer_norm, self_attention, Queries};
use crate::params::{pool_prefix, Bound, ParamStore};

/// Stacks per-slice CLS vectors into `[S × d]`, keeping slice order.
pub fn stack_cls(slices: &[SliceTokens]) -> Result<Tensor> {
    let first = slices
        .first()
        .ok_or_else(|| CoreError::Contract("cannot stack an empty slice list".into()))?;
    let d = first.cls.len();
    let mut data = Vec::with_capacity(slices.len() * d);
    for s in slices {
        if s.cls.len() != d {
            return Err(CoreError::Contract(format!("CLS width {} differs from {d}", s.cls.len())));
        }
        data.extend_from_slice(&s.cls);
    }
    Ok(Tensor::new(vec![slices.len(), d], data)?)
}

/// Adds rows `0..S` of the slice positional table to `seq: [v × S × d]`.
pub fn add_slice_positional(g: &mut Graph, seq: Var, p: &Bound) -> Result<Var> {
    let table = p.get("aggregator.slice_pos")?;
    let s = g.shape(seq)[1];
    let capacity = g.shape(table)[0];
    if s > capacity {
        return Err(CoreError::Capacity { slices: s, capacity });
    }
    let rows = g.narrow(table, 0, 0, s)?;
    Ok(g.add_broadcast(seq, rows)?)
}

/// Per-volume slice weights from attention probabilities
/// `[v·heads × S × S]`: attention each slice receives as a key, averaged
/// over heads and queries.
fn received_attention(attn: &Tensor, v: usize, heads: usize) -> Vec<Vec<f64>> {
    let s = attn.shape()[2];
    let d = attn.data();
    let norm = (heads * s) as f64;
    (0..v)
        .map(|i| {
            let mut w = vec![0.0; s];
            for h in 0..heads {
                let base = (i * heads + h) * s * s;
                for q in 0..s {
                    for (k, wk) in w.iter_mut().enumerate() {
                        *wk += d[base + q * s + k];
                    }
                }
            }
            w.iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Pre-norm residual self-attention layers over the slice axis of
/// `seq: [v × S × d]`. Returns the transformed sequence and, per volume,
/// the slice weights averaged over layers, heads and queries.
pub fn attention_pool(g: &mut Graph, seq: Var, p: &Bound, cfg: &ModelConfig) -> Result<(Var, Vec<Vec<f64>>)> {
    let v = g.shape(seq)[0];
    let s = g.shape(seq)[1];
    let a = &cfg.aggregator;
    let mut x = seq;
    let mut weights = vec![vec![0.0; s]; v];
    for l in 0..a.pool_layers {
        let prefix = pool_prefix(l);
        let h = layer_norm(g, x, p, &format!("{prefix}.ln"), cfg.layer_norm_eps.0)?;
        let (out, attn) = self_attention(g, h, p, &prefix, a.pool_heads, None, Queries::All)?;
        x = g.add(x, out)?;
        for (acc, w) in weights.iter_mut().zip(received_attention(g.value(attn), v, a.pool_heads)) {
            for (a, b) in acc.iter_mut().zip(w) {
                *a += b / cfg.aggregator.pool_layers as f64;
            }
        }
    }
    Ok((x, weights))
}

/// Mean over the slice axis: `[v × S × d] → [v × d]`.
pub fn mean_pool(g: &mut Graph, seq: Var) -> Result<Var> {
    Ok(g.mean(seq, 1)?)
}

/// Slice descriptors `[v·S × d]` to volume embeddings `[v × d]` plus
/// per-volume slice weights.
pub fn aggregate(g: &mut Graph, cls: Var, n_volumes: usize, p: &Bound, cfg: &ModelConfig) -> Result<(Var, Vec<Vec<f64>>)> {
    let (rows, d) = (g.shape(cls)[0], g.shape(cls)[1]);
    if n_volumes == 0 || rows % n_volumes != 0 {
        return Err(CoreError::Contract(format!("{rows} slices do not split into {n_volumes} volumes")));
    }
    let seq = g.reshape(cls, &[n_volumes, rows / n_volumes, d])?;
    let seq = add_slice_positional(g, seq, p)?;
    let (seq, weights) = attention_pool(g, seq, p, cfg)?;
    Ok((mean_pool(g, seq)?, weights))
}

/// Volume embedding `z_V` and slice attention weights for one volume, all
/// parameters held constant.
pub fn encode_volume(volume: &MaskVolume, params: &ParamStore, cfg: &ModelConfig) -> Result<(Vec<f64>, AttentionRecord)> {
    volume.check_geometry(cfg)?;
    let cache = frozen_prefix(&volume.slices()?, params, cfg)?;
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let cls = cls_from_caches(&mut g, &[&cache], &p, cfg)?;
    let (z, mut weights) = aggregate(&mut g, cls, 1, &p, cfg)?;
    let record = AttentionRecord {
        patient_id: volume.patient_id.clone(),
        weights: weights.remove(0),
    };
    Ok((g.data(z).to_vec(), record))
}
