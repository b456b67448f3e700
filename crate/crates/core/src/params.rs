use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use respnet_autodiff::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{CoreError, Result};

/// Name, shape and trainability of one parameter; the canonical manifest is
/// the ordered list of these.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

/// Named parameter tensors in canonical order. A tensor's `requires_grad`
/// flag marks it trainable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(CoreError::Contract(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn position(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| CoreError::Contract(format!("unknown parameter {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.tensors[self.position(name)?])
    }

    /// Replaces a tensor's values; shape and trainability are kept.
    pub fn set_data(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let i = self.position(name)?;
        self.tensors[i].set_data(data)?;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub(crate) fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn manifest(&self) -> Vec<ParamSpec> {
        self.iter()
            .map(|(name, t)| ParamSpec {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                trainable: t.requires_grad(),
            })
            .collect()
    }

    /// Positions of trainable tensors, in canonical order.
    pub fn trainable_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tensors[i].requires_grad()).collect()
    }

    pub fn trainable_tensors(&self) -> Vec<Tensor> {
        self.trainable_positions().into_iter().map(|i| self.tensors[i].clone()).collect()
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// All values concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_values());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Rebuilds a store from a manifest and a flat value vector.
    pub fn from_flat(manifest: &[ParamSpec], values: &[f64]) -> Result<Self> {
        let mut store = Self::new();
        let mut offset = 0;
        for spec in manifest {
            let n: usize = spec.shape.iter().product();
            let chunk = values.get(offset..offset + n).ok_or_else(|| {
                CoreError::Contract(format!("value vector too short for parameter {}", spec.name))
            })?;
            offset += n;
            let t = Tensor::new(spec.shape.clone(), chunk.to_vec())?.with_requires_grad(spec.trainable);
            store.insert(spec.name.clone(), t)?;
        }
        if offset != values.len() {
            return Err(CoreError::Contract(format!(
                "{} values left over after filling the manifest",
                values.len() - offset
            )));
        }
        Ok(store)
    }

    /// Registers every tensor on `g`: trainable ones as leaves, frozen ones
    /// as constants.
    pub fn bind(&self, g: &mut Graph) -> Bound<'_> {
        let vars = self
            .tensors
            .iter()
            .map(|t| if t.requires_grad() { g.leaf(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        Bound { vars, index: &self.index }
    }

    /// Like [`bind`](Self::bind), but trainable tensors come from existing
    /// vars (one per trainable position, in canonical order).
    pub fn bind_with(&self, g: &mut Graph, trainable: &[Var]) -> Result<Bound<'_>> {
        let mut it = trainable.iter();
        let mut vars = Vec::with_capacity(self.len());
        for t in &self.tensors {
            if t.requires_grad() {
                let v = it
                    .next()
                    .ok_or_else(|| CoreError::Contract("too few trainable vars supplied".into()))?;
                vars.push(*v);
            } else {
                vars.push(g.constant(t.clone()));
            }
        }
        if it.next().is_some() {
            return Err(CoreError::Contract("too many trainable vars supplied".into()));
        }
        Ok(Bound { vars, index: &self.index })
    }

    /// Registers everything as constants (inference).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound<'_> {
        let vars = self.tensors.iter().map(|t| g.constant(t.clone())).collect();
        Bound { vars, index: &self.index }
    }
}

/// Graph handles for every parameter of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound<'a> {
    vars: Vec<Var>,
    index: &'a HashMap<String, usize>,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| CoreError::Contract(format!("unknown parameter {name}")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

pub(crate) fn block_prefix(i: usize) -> String {
    format!("encoder.block{i}")
}

pub(crate) fn pool_prefix(i: usize) -> String {
    format!("aggregator.pool{i}")
}

/// LoRA adapter names for a linear layer with the given prefix.
pub(crate) fn lora_names(linear: &str) -> (String, String) {
    (format!("{linear}.lora_a"), format!("{linear}.lora_b"))
}

/// Linear layers of a transformer block, with `(d_in, d_out)`.
pub(crate) fn block_linears(d: usize, hidden: usize) -> [(&'static str, usize, usize); 4] {
    [("attn.qkv", d, 3 * d), ("attn.proj", d, d), ("mlp.fc1", d, hidden), ("mlp.fc2", hidden, d)]
}

struct Init<'r, R: Rng> {
    store: ParamStore,
    rng: &'r mut R,
}

impl<R: Rng> Init<'_, R> {
    fn normal(&mut self, name: String, shape: Vec<usize>, std: f64, trainable: bool) -> Result<()> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| CoreError::Config(e.to_string()))?;
        let data = (0..n).map(|_| dist.sample(self.rng)).collect();
        self.store.insert(name, Tensor::new(shape, data)?.with_requires_grad(trainable))
    }

    fn constant(&mut self, name: String, shape: Vec<usize>, value: f64, trainable: bool) -> Result<()> {
        self.store.insert(name, Tensor::full(shape, value).with_requires_grad(trainable))
    }

    /// LeCun-normal weight `[d_in × d_out]` plus zero bias.
    fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize, trainable: bool) -> Result<()> {
        self.normal(format!("{prefix}.weight"), vec![d_in, d_out], (1.0 / d_in as f64).sqrt(), trainable)?;
        self.constant(format!("{prefix}.bias"), vec![d_out], 0.0, trainable)
    }

    fn layer_norm(&mut self, prefix: &str, d: usize, trainable: bool) -> Result<()> {
        self.constant(format!("{prefix}.gamma"), vec![d], 1.0, trainable)?;
        self.constant(format!("{prefix}.beta"), vec![d], 0.0, trainable)
    }
}

pub const EMBED_INIT_STD: f64 = 0.02;
pub const LORA_A_INIT_STD: f64 = 0.02;
pub const PATCH_BIAS_INIT_STD: f64 = 0.3;

/// Random initialization of every model parameter in canonical order.
///
/// Encoder weights are frozen except the LoRA factors on the last block
/// (`A ~ N(0, 0.02²)`, `B = 0`). Slice positional table, pooling layers and
/// both heads are trainable.
pub fn init_params<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<ParamStore> {
    cfg.validate()?;
    let e = &cfg.encoder;
    let d = e.embed_dim;
    let hidden = d * e.mlp_ratio;
    let mut init = Init { store: ParamStore::new(), rng };

    init.linear("encoder.patch_embed", e.patch_dim(), d, false)?;
    // A non-trivial bias keeps empty patches away from the LayerNorm
    // singularity, so voxel noise on empty slices is not amplified.
    let bias = (0..d).map(|_| Normal::new(0.0, PATCH_BIAS_INIT_STD).expect("valid std").sample(init.rng)).collect();
    init.store.set_data("encoder.patch_embed.bias", bias)?;
    init.normal("encoder.patch_pos".into(), vec![e.n_patches(), d], EMBED_INIT_STD, false)?;
    init.normal("encoder.cls_token".into(), vec![d], EMBED_INIT_STD, false)?;
    for b in 0..e.n_blocks {
        let p = block_prefix(b);
        init.layer_norm(&format!("{p}.ln1"), d, false)?;
        init.layer_norm(&format!("{p}.ln2"), d, false)?;
        for (name, d_in, d_out) in block_linears(d, hidden) {
            let lp = format!("{p}.{name}");
            init.linear(&lp, d_in, d_out, false)?;
            if e.use_lora && b + 1 == e.n_blocks {
                let (a, bn) = lora_names(&lp);
                init.normal(a, vec![e.lora_rank, d_in], LORA_A_INIT_STD, true)?;
                init.constant(bn, vec![d_out, e.lora_rank], 0.0, true)?;
            }
        }
    }

    init.normal("aggregator.slice_pos".into(), vec![cfg.aggregator.max_slices, d], EMBED_INIT_STD, true)?;
    for l in 0..cfg.aggregator.pool_layers {
        let p = pool_prefix(l);
        init.layer_norm(&format!("{p}.ln"), d, true)?;
        init.linear(&format!("{p}.qkv"), d, 3 * d, true)?;
        init.linear(&format!("{p}.proj"), d, d, true)?;
    }

    init.linear("cls_head.fc1", d, d / 2, true)?;
    init.layer_norm("cls_head.ln1", d / 2, true)?;
    init.linear("cls_head.fc2", d / 2, d / 8, true)?;
    init.layer_norm("cls_head.ln2", d / 8, true)?;
    init.linear("cls_head.out", d / 8, 2, true)?;

    init.linear("proj_head.fc1", d, d, true)?;
    init.layer_norm("proj_head.ln", d, true)?;
    init.linear("proj_head.out", d, cfg.heads.proj_dim, true)?;
    Ok(init.store)
}
