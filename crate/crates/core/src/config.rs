use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CoreError::Config(msg()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    /// When false the whole encoder is frozen and carries no adapters.
    pub use_lora: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 16,
            embed_dim: 32,
            n_blocks: 2,
            n_heads: 4,
            mlp_ratio: 4,
            lora_rank: 4,
            lora_alpha: 8.0,
            use_lora: true,
        }
    }
}

impl EncoderConfig {
    pub fn n_patches(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn lora_scale(&self) -> f64 {
        self.lora_alpha / self.lora_rank as f64
    }

    pub fn validate(&self) -> Result<()> {
        check(self.patch_size > 0 && self.image_size > 0, || "image and patch size must be positive".into())?;
        check(self.image_size.is_multiple_of(self.patch_size), || {
            format!("image_size {} not divisible by patch_size {}", self.image_size, self.patch_size)
        })?;
        check(self.n_heads > 0 && self.embed_dim.is_multiple_of(self.n_heads), || {
            format!("embed_dim {} not divisible by n_heads {}", self.embed_dim, self.n_heads)
        })?;
        check(self.n_blocks >= 1, || "n_blocks must be >= 1".into())?;
        check(self.mlp_ratio >= 1, || "mlp_ratio must be >= 1".into())?;
        check(self.lora_rank >= 1, || "lora_rank must be >= 1".into())?;
        check(self.lora_alpha.is_finite(), || "lora_alpha must be finite".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregatorConfig {
    pub max_slices: usize,
    pub pool_layers: usize,
    pub pool_heads: usize,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            max_slices: 32,
            pool_layers: 1,
            pool_heads: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub proj_dim: usize,
    pub dropout: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            proj_dim: 16,
            dropout: 0.2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub aggregator: AggregatorConfig,
    pub heads: HeadConfig,
    pub layer_norm_eps: LayerNormEps,
}

/// Wrapper so the default of 1e-5 survives partial JSON configs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerNormEps(pub f64);

impl Default for LayerNormEps {
    fn default() -> Self {
        LayerNormEps(1e-5)
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let d = self.encoder.embed_dim;
        check(d.is_multiple_of(8), || format!("embed_dim {d} must be divisible by 8 for the classification head"))?;
        let a = &self.aggregator;
        check(a.max_slices >= 1, || "max_slices must be >= 1".into())?;
        check(a.pool_layers >= 1, || "pool_layers must be >= 1".into())?;
        check(a.pool_heads > 0 && d.is_multiple_of(a.pool_heads), || {
            format!("embed_dim {d} not divisible by pool_heads {}", a.pool_heads)
        })?;
        check(self.heads.proj_dim >= 1, || "proj_dim must be >= 1".into())?;
        check((0.0..1.0).contains(&self.heads.dropout), || {
            format!("dropout must lie in [0, 1), got {}", self.heads.dropout)
        })?;
        check(self.layer_norm_eps.0 > 0.0, || "layer_norm_eps must be > 0".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub margin: f64,
    pub alpha_max: f64,
    pub ramp_epochs: usize,
    pub hard_mining: bool,
    pub hard_mining_start_epoch: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            alpha_max: 0.3,
            ramp_epochs: 30,
            hard_mining: true,
            hard_mining_start_epoch: 20,
        }
    }
}

impl LossConfig {
    /// Cross-entropy only: the contrastive weight stays at zero.
    pub fn ce_only() -> Self {
        Self {
            alpha_max: 0.0,
            hard_mining: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check(self.margin > 0.0 && self.margin.is_finite(), || format!("margin must be > 0, got {}", self.margin))?;
        check(self.alpha_max >= 0.0 && self.alpha_max.is_finite(), || {
            format!("alpha_max must be >= 0, got {}", self.alpha_max)
        })?;
        check(self.ramp_epochs >= 1, || "ramp_epochs must be >= 1".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            max_epochs: 100,
            patience: 10,
            batch_size: 8,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.lr > 0.0 && self.lr.is_finite(), || format!("lr must be > 0, got {}", self.lr))?;
        check(self.max_epochs >= 1, || "max_epochs must be >= 1".into())?;
        check(self.patience >= 1, || "patience must be >= 1".into())?;
        check(self.batch_size >= 1, || "batch_size must be >= 1".into())?;
        check(self.weight_decay >= 0.0, || "weight_decay must be >= 0".into())?;
        check((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2), || {
            "betas must lie in [0, 1)".into()
        })?;
        check(self.adam_eps > 0.0, || "adam_eps must be > 0".into())?;
        self.loss.validate()
    }
}
