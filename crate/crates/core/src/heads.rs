//! Classification and projection heads and the training losses.

use rand::Rng;
use respnet_autodiff::kernels::neg_log_softmax;
use respnet_autodiff::{Graph, Tensor, TensorError, Var, MIN_NORM};

use crate::config::{LossConfig, ModelConfig};
use crate::error::{CoreError, Result};
use crate::layers::{layer_norm, linear};
use crate::pairs::PairBatch;
use crate::params::Bound;

/// `d → d/2 → d/8 → 2`; each hidden layer is Linear, LayerNorm, GELU and
/// dropout. `z: [v × d]` gives logits `[v × 2]`.
pub fn cls_head<R: Rng + ?Sized>(
    g: &mut Graph,
    z: Var,
    p: &Bound,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let eps = cfg.layer_norm_eps.0;
    let mut h = z;
    for i in 1..=2 {
        h = linear(g, h, p, &format!("cls_head.fc{i}"), None)?;
        h = layer_norm(g, h, p, &format!("cls_head.ln{i}"), eps)?;
        h = g.gelu(h)?;
        h = g.dropout(h, cfg.heads.dropout, training, rng)?;
    }
    linear(g, h, p, "cls_head.out", None)
}

/// `d → d → p` with LayerNorm and GELU on the hidden layer; unnormalized.
pub fn proj_head(g: &mut Graph, z: Var, p: &Bound, cfg: &ModelConfig) -> Result<Var> {
    let h = linear(g, z, p, "proj_head.fc1", None)?;
    let h = layer_norm(g, h, p, "proj_head.ln", cfg.layer_norm_eps.0)?;
    let h = g.gelu(h)?;
    linear(g, h, p, "proj_head.out", None)
}

/// Unit-norm copy of `z`; norms at or below `1e-12` are an error.
pub fn l2_normalize(z: &[f64]) -> Result<Vec<f64>> {
    let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > MIN_NORM) {
        return Err(TensorError::DegenerateNorm { norm: n, min: MIN_NORM }.into());
    }
    Ok(z.iter().map(|v| v / n).collect())
}

/// `−log softmax(logits)[y]`.
pub fn cross_entropy(logits: &[f64], y: usize) -> Result<f64> {
    if y >= logits.len() {
        return Err(CoreError::Contract(format!("label {y} out of range for {} logits", logits.len())));
    }
    Ok(neg_log_softmax(logits, y))
}

pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

fn check_unit(z: &[f64]) -> Result<()> {
    let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(CoreError::Contract(format!("embedding norm {n} is not 1")));
    }
    Ok(())
}

/// `s·D² + (1−s)·max(0, m−D)²` with `D = ‖z1 − z2‖`.
pub fn contrastive_margin_loss(z1: &[f64], z2: &[f64], same: u8, margin: f64) -> Result<f64> {
    if z1.len() != z2.len() {
        return Err(CoreError::Contract(format!("embedding lengths {} and {} differ", z1.len(), z2.len())));
    }
    if margin <= 0.0 {
        return Err(CoreError::Contract(format!("margin must be > 0, got {margin}")));
    }
    check_unit(z1)?;
    check_unit(z2)?;
    let d2: f64 = z1.iter().zip(z2).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(if same == 1 {
        d2
    } else {
        let hinge = (margin - d2.sqrt()).max(0.0);
        hinge * hinge
    })
}

/// `alpha_max · min(1, epoch / ramp_epochs)`.
pub fn alpha_schedule(epoch: usize, cfg: &LossConfig) -> f64 {
    cfg.alpha_max * (epoch as f64 / cfg.ramp_epochs as f64).min(1.0)
}

/// `CE + α·contrastive` for one labelled volume and one pair.
#[allow(clippy::too_many_arguments)]
pub fn multi_loss(logits: &[f64], y: usize, z1: &[f64], z2: &[f64], same: u8, alpha: f64, margin: f64) -> Result<f64> {
    Ok(cross_entropy(logits, y)? + alpha * contrastive_margin_loss(z1, z2, same, margin)?)
}

/// Mean contrastive loss over `pairs`, with `z: [v × p]` unit rows.
/// `None` for an empty pair batch.
pub fn contrastive_loss_graph(g: &mut Graph, z: Var, pairs: &PairBatch, margin: f64) -> Result<Option<Var>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let p = g.shape(z)[1];
    let n = pairs.len();
    let a = g.index_select(z, &pairs.anchors)?;
    let b = g.index_select(z, &pairs.partners)?;
    let diff = g.sub(a, b)?;
    let sq = g.square(diff)?;
    let d2 = g.mean(sq, 1)?;
    let d2 = g.scale(d2, p as f64)?;
    let d = g.sqrt(d2)?;
    let neg_d = g.scale(d, -1.0)?;
    let gap = g.add_scalar(neg_d, margin)?;
    let hinge = g.relu(gap)?;
    let hinge2 = g.square(hinge)?;
    let s: Vec<f64> = pairs.same.iter().map(|&s| f64::from(s)).collect();
    let not_s: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
    let s = g.constant(Tensor::vector(s)?);
    let not_s = g.constant(Tensor::vector(not_s)?);
    let pos = g.mul(s, d2)?;
    let neg = g.mul(not_s, hinge2)?;
    let per_pair = g.add(pos, neg)?;
    debug_assert_eq!(g.shape(per_pair), [n]);
    Ok(Some(g.mean_all(per_pair)?))
}
