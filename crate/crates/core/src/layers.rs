//! Graph-level building blocks shared by the encoder and the aggregator.

use respnet_autodiff::{Graph, Var};

use crate::error::Result;
use crate::params::{lora_names, Bound};

/// `x·W + b`, plus `scale·(x·Aᵀ)·Bᵀ` when `lora_scale` is set and the
/// adapter factors exist. `x` is `[n × d_in]`.
pub fn linear(g: &mut Graph, x: Var, p: &Bound, prefix: &str, lora_scale: Option<f64>) -> Result<Var> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    let xw = g.matmul(x, w)?;
    let base = g.add_broadcast(xw, b)?;
    let Some(scale) = lora_scale else { return Ok(base) };
    let (a_name, b_name) = lora_names(prefix);
    if !p.has(&a_name) {
        return Ok(base);
    }
    let at = g.transpose(p.get(&a_name)?)?;
    let bt = g.transpose(p.get(&b_name)?)?;
    let h = g.matmul(x, at)?;
    let delta = g.matmul(h, bt)?;
    let delta = g.scale(delta, scale)?;
    Ok(g.add(base, delta)?)
}

pub fn layer_norm(g: &mut Graph, x: Var, p: &Bound, prefix: &str, eps: f64) -> Result<Var> {
    let gamma = p.get(&format!("{prefix}.gamma"))?;
    let beta = p.get(&format!("{prefix}.beta"))?;
    Ok(g.layer_norm(x, gamma, beta, eps)?)
}

/// Which query rows an attention layer computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Queries {
    All,
    /// Only row 0 (the CLS token); keys and values still span every row.
    First,
}

/// Multi-head self-attention over `x: [b × t × d]` with fused `qkv` and
/// `proj` linears under `prefix`. Returns the projected output
/// (`[b × t × d]`, or `[b × 1 × d]` for [`Queries::First`]) and the
/// attention probabilities `[b·heads × t_q × t]`.
pub fn self_attention(
    g: &mut Graph,
    x: Var,
    p: &Bound,
    prefix: &str,
    heads: usize,
    lora_scale: Option<f64>,
    queries: Queries,
) -> Result<(Var, Var)> {
    let s = g.shape(x).to_vec();
    let (b, t, d) = (s[0], s[1], s[2]);
    let dh = d / heads;
    let flat = g.reshape(x, &[b * t, d])?;
    let qkv = linear(g, flat, p, &format!("{prefix}.qkv"), lora_scale)?;
    let qkv = g.reshape(qkv, &[b, t, 3, heads, dh])?;
    let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?;
    let part = |g: &mut Graph, i: usize| -> Result<Var> {
        let v = g.narrow(qkv, 0, i, 1)?;
        Ok(g.reshape(v, &[b * heads, t, dh])?)
    };
    let mut q = part(g, 0)?;
    let k = part(g, 1)?;
    let v = part(g, 2)?;
    let tq = match queries {
        Queries::All => t,
        Queries::First => {
            q = g.narrow(q, 1, 0, 1)?;
            1
        }
    };
    let scores = g.batch_matmul(q, k, true)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let attn = g.softmax(scores)?;
    let ctx = g.batch_matmul(attn, v, false)?;
    let ctx = g.reshape(ctx, &[b, heads, tq, dh])?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[b * tq, d])?;
    let out = linear(g, ctx, p, &format!("{prefix}.proj"), lora_scale)?;
    let out = g.reshape(out, &[b, tq, d])?;
    Ok((out, attn))
}

/// Position-wise `fc2(gelu(fc1(x)))` over the last axis of `x: [b × t × d]`.
fn mlp(g: &mut Graph, x: Var, p: &Bound, prefix: &str, lora_scale: Option<f64>) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let d = s[s.len() - 1];
    let rows = g.value(x).len() / d;
    let flat = g.reshape(x, &[rows, d])?;
    let h = linear(g, flat, p, &format!("{prefix}.mlp.fc1"), lora_scale)?;
    let h = g.gelu(h)?;
    let out = linear(g, h, p, &format!("{prefix}.mlp.fc2"), lora_scale)?;
    Ok(g.reshape(out, &s)?)
}

/// Pre-norm transformer block on `x: [b × t × d]`:
/// `x + attn(ln1(x))`, then `+ mlp(ln2(·))`.
pub fn transformer_block(
    g: &mut Graph,
    x: Var,
    p: &Bound,
    prefix: &str,
    heads: usize,
    eps: f64,
    lora_scale: Option<f64>,
) -> Result<Var> {
    let h = layer_norm(g, x, p, &format!("{prefix}.ln1"), eps)?;
    let (a, _) = self_attention(g, h, p, &format!("{prefix}.attn"), heads, lora_scale, Queries::All)?;
    let x1 = g.add(x, a)?;
    let h2 = layer_norm(g, x1, p, &format!("{prefix}.ln2"), eps)?;
    let m = mlp(g, h2, p, prefix, lora_scale)?;
    Ok(g.add(x1, m)?)
}

/// Row 0 of [`transformer_block`], computed without the other query rows.
/// Returns `[b × d]`.
pub fn transformer_block_cls(
    g: &mut Graph,
    x: Var,
    p: &Bound,
    prefix: &str,
    heads: usize,
    eps: f64,
    lora_scale: Option<f64>,
) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let h = layer_norm(g, x, p, &format!("{prefix}.ln1"), eps)?;
    let (a, _) = self_attention(g, h, p, &format!("{prefix}.attn"), heads, lora_scale, Queries::First)?;
    let x0 = g.narrow(x, 1, 0, 1)?;
    let x1 = g.add(x0, a)?;
    let h2 = layer_norm(g, x1, p, &format!("{prefix}.ln2"), eps)?;
    let m = mlp(g, h2, p, prefix, lora_scale)?;
    let out = g.add(x1, m)?;
    Ok(g.reshape(out, &[s[0], s[2]])?)
}
