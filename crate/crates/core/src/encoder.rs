//! Slice encoder: patch embedding, CLS token and a stack of pre-norm
//! transformer blocks, with LoRA adapters on the last block only.

use respnet_autodiff::{Graph, Tensor, TensorError, Var};

use crate::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::layers::{transformer_block, transformer_block_cls};
use crate::params::{block_prefix, Bound, ParamStore};

/// Replicates a `[H × W × 1]` slice into `[H × W × 3]`.
pub fn to_three_channel(slice: &Tensor) -> Result<Tensor> {
    let s = slice.shape();
    if s.len() != 3 || s[2] != 1 {
        return Err(TensorError::Dimension {
            op: "to_three_channel",
            lhs: s.to_vec(),
            rhs: vec![0, 0, 1],
        }
        .into());
    }
    let data = slice.data().iter().flat_map(|&v| [v, v, v]).collect();
    Ok(Tensor::new(vec![s[0], s[1], 3], data)?)
}

/// Non-overlapping patches of a `[H × W × 3]` slice, each flattened in
/// (row, column, channel) order. Returns `[N × patch²·3]` row-major.
pub fn patchify(slice3: &Tensor, cfg: &ModelConfig) -> Result<Vec<f64>> {
    let e = &cfg.encoder;
    let (h, ps) = (e.image_size, e.patch_size);
    if slice3.shape() != [h, h, 3] {
        return Err(TensorError::Dimension {
            op: "patch_embed",
            lhs: slice3.shape().to_vec(),
            rhs: vec![h, h, 3],
        }
        .into());
    }
    let side = h / ps;
    let d = slice3.data();
    let mut out = Vec::with_capacity(slice3.len());
    for pi in 0..side {
        for pj in 0..side {
            for r in 0..ps {
                let row = pi * ps + r;
                let start = (row * h + pj * ps) * 3;
                out.extend_from_slice(&d[start..start + ps * 3]);
            }
        }
    }
    Ok(out)
}

/// Linear patch embedding of a batch of 3-channel slices: `[b·N × d]`.
pub fn patch_embed(g: &mut Graph, slices3: &[Tensor], p: &Bound, cfg: &ModelConfig) -> Result<Var> {
    let e = &cfg.encoder;
    let mut data = Vec::with_capacity(slices3.len() * e.n_patches() * e.patch_dim());
    for s in slices3 {
        data.extend(patchify(s, cfg)?);
    }
    let patches = g.constant(Tensor::new(vec![slices3.len() * e.n_patches(), e.patch_dim()], data)?);
    let w = p.get("encoder.patch_embed.weight")?;
    let b = p.get("encoder.patch_embed.bias")?;
    let xw = g.matmul(patches, w)?;
    Ok(g.add_broadcast(xw, b)?)
}

/// Patch tokens plus positional embedding, with the CLS token prepended:
/// `[b × (N+1) × d]`.
fn embed_tokens(g: &mut Graph, slices: &[Tensor], p: &Bound, cfg: &ModelConfig) -> Result<Var> {
    if slices.is_empty() {
        return Err(CoreError::Contract("no slices to encode".into()));
    }
    let (n, d, b) = (cfg.encoder.n_patches(), cfg.encoder.embed_dim, slices.len());
    let slices3 = slices.iter().map(to_three_channel).collect::<Result<Vec<_>>>()?;
    let tokens = patch_embed(g, &slices3, p, cfg)?;
    let tokens = g.reshape(tokens, &[b, n, d])?;
    let tokens = g.add_broadcast(tokens, p.get("encoder.patch_pos")?)?;
    let cls = g.reshape(p.get("encoder.cls_token")?, &[1, d])?;
    let cls = g.index_select(cls, &vec![0; b])?;
    let cls = g.reshape(cls, &[b, 1, d])?;
    Ok(g.concat(&[cls, tokens], 1)?)
}

fn lora_scale(cfg: &ModelConfig) -> Option<f64> {
    cfg.encoder.use_lora.then(|| cfg.encoder.lora_scale())
}

/// Runs blocks `[from, to)` on `x: [b × (N+1) × d]`.
fn run_blocks(g: &mut Graph, mut x: Var, p: &Bound, cfg: &ModelConfig, from: usize, to: usize) -> Result<Var> {
    let e = &cfg.encoder;
    for i in from..to {
        let scale = if i + 1 == e.n_blocks { lora_scale(cfg) } else { None };
        x = transformer_block(g, x, p, &block_prefix(i), e.n_heads, cfg.layer_norm_eps.0, scale)?;
    }
    Ok(x)
}

/// Full encoder over a batch of `[H × W × 1]` slices: `[b × (N+1) × d]`.
pub fn encode_tokens(g: &mut Graph, slices: &[Tensor], p: &Bound, cfg: &ModelConfig) -> Result<Var> {
    let x = embed_tokens(g, slices, p, cfg)?;
    run_blocks(g, x, p, cfg, 0, cfg.encoder.n_blocks)
}

/// Token embeddings of one slice; `cls` is row 0 of `tokens`.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceTokens {
    pub tokens: Tensor,
    pub cls: Vec<f64>,
}

/// Encodes one slice with every parameter held constant.
pub fn encode_slice(slice: &Tensor, params: &ParamStore, cfg: &ModelConfig) -> Result<SliceTokens> {
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let out = encode_tokens(&mut g, std::slice::from_ref(slice), &p, cfg)?;
    let d = cfg.encoder.embed_dim;
    let t = g.value(out);
    let tokens = Tensor::new(vec![t.shape()[1], d], t.data().to_vec())?;
    let cls = tokens.row(0).to_vec();
    Ok(SliceTokens { tokens, cls })
}

/// Output of the frozen part of the encoder for a stack of slices.
///
/// With adapters the last block is still trainable, so the cache holds
/// the token matrices entering it. Without adapters the whole encoder is
/// frozen and the cache holds the final CLS descriptors.
#[derive(Clone, Debug, PartialEq)]
pub enum SliceCache {
    /// `[S × (N+1) × d]`
    Tokens(Tensor),
    /// `[S × d]`
    Cls(Tensor),
}

impl SliceCache {
    pub fn n_slices(&self) -> usize {
        match self {
            SliceCache::Tokens(t) | SliceCache::Cls(t) => t.shape()[0],
        }
    }

    fn tensor(&self) -> &Tensor {
        match self {
            SliceCache::Tokens(t) | SliceCache::Cls(t) => t,
        }
    }
}

/// Evaluates every frozen encoder stage for `slices`.
pub fn frozen_prefix(slices: &[Tensor], params: &ParamStore, cfg: &ModelConfig) -> Result<SliceCache> {
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let x = embed_tokens(&mut g, slices, &p, cfg)?;
    let e = &cfg.encoder;
    if e.use_lora {
        let x = run_blocks(&mut g, x, &p, cfg, 0, e.n_blocks - 1)?;
        Ok(SliceCache::Tokens(g.value(x).clone()))
    } else {
        let last = e.n_blocks - 1;
        let x = run_blocks(&mut g, x, &p, cfg, 0, last)?;
        let cls = transformer_block_cls(&mut g, x, &p, &block_prefix(last), e.n_heads, cfg.layer_norm_eps.0, None)?;
        Ok(SliceCache::Cls(g.value(cls).clone()))
    }
}

/// CLS descriptors `[ΣS × d]` for several volumes' caches, running the
/// trainable last block (CLS row only) when adapters are present.
pub fn cls_from_caches(g: &mut Graph, caches: &[&SliceCache], p: &Bound, cfg: &ModelConfig) -> Result<Var> {
    let first = caches
        .first()
        .ok_or_else(|| CoreError::Contract("no volumes in batch".into()))?;
    let mut shape = first.tensor().shape().to_vec();
    shape[0] = caches.iter().map(|c| c.n_slices()).sum();
    let mut data = Vec::with_capacity(shape.iter().product());
    for c in caches {
        if std::mem::discriminant(*c) != std::mem::discriminant(*first) || c.tensor().shape()[1..] != shape[1..] {
            return Err(CoreError::Contract("inconsistent slice caches in batch".into()));
        }
        data.extend_from_slice(c.tensor().data());
    }
    let x = g.constant(Tensor::new(shape, data)?);
    match first {
        SliceCache::Cls(_) => Ok(x),
        SliceCache::Tokens(_) => {
            let e = &cfg.encoder;
            let last = e.n_blocks - 1;
            transformer_block_cls(g, x, p, &block_prefix(last), e.n_heads, cfg.layer_norm_eps.0, lora_scale(cfg))
        }
    }
}
