#![allow(dead_code)]

use respnet_core::config::{AggregatorConfig, EncoderConfig, HeadConfig, ModelConfig};
use respnet_core::data::{generate_synthetic, MaskVolume, SynthConfig};
use respnet_core::pipeline::desk_train_config;
use respnet_core::{Model, PreparedVolume, TrainConfig};

/// Small geometry that keeps graphs cheap: 16×16 slices, 4 patches, d = 16.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            image_size: 16,
            patch_size: 8,
            embed_dim: 16,
            n_blocks: 2,
            n_heads: 2,
            mlp_ratio: 2,
            ..EncoderConfig::default()
        },
        aggregator: AggregatorConfig {
            max_slices: 8,
            pool_layers: 1,
            pool_heads: 2,
        },
        heads: HeadConfig {
            proj_dim: 8,
            ..HeadConfig::default()
        },
        ..ModelConfig::default()
    }
}

pub fn tiny_synth(n_patients: usize, delta: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        n_patients,
        delta,
        image_size: 16,
        slices: 6,
        seed,
        ..SynthConfig::default()
    }
}

pub fn tiny_volumes(n_patients: usize, seed: u64) -> Vec<MaskVolume> {
    generate_synthetic(&tiny_synth(n_patients, 1.0, seed)).unwrap()
}

pub fn prepared(model: &Model, volumes: &[MaskVolume]) -> Vec<PreparedVolume> {
    model.prepare_all(volumes).unwrap()
}

pub fn tiny_train_config(max_epochs: usize, seed: u64) -> TrainConfig {
    let mut cfg = desk_train_config();
    cfg.max_epochs = max_epochs;
    cfg.seed = seed;
    cfg.batch_size = 4;
    cfg
}

pub fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}
