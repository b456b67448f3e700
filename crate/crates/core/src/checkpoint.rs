//! Checkpoint file: magic, JSON header (configuration, epoch, metric and
//! parameter manifest) and a little-endian `f64` blob in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::data::volume::{read_framed, write_framed};
use crate::error::{CoreError, Result};
use crate::model::Model;
use crate::params::{ParamSpec, ParamStore};

const CHECKPOINT_MAGIC: &[u8; 8] = b"RSPNCKPT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    pub epoch: Option<usize>,
    pub metric: Option<f64>,
    pub manifest: Vec<ParamSpec>,
}

pub fn encode_checkpoint(model: &Model, train: Option<&TrainConfig>, epoch: Option<usize>, metric: Option<f64>) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        model: model.config.clone(),
        train: train.cloned(),
        epoch,
        metric,
        manifest: model.params.manifest(),
    };
    let header = serde_json::to_vec_pretty(&header)?;
    let payload: Vec<u8> = model.params.flatten().iter().flat_map(|v| v.to_le_bytes()).collect();
    Ok(write_framed(CHECKPOINT_MAGIC, &header, &payload))
}

pub fn decode_checkpoint(bytes: &[u8], context: &str) -> Result<(Model, CheckpointHeader)> {
    let (header, payload) = read_framed(CHECKPOINT_MAGIC, bytes, context)?;
    let h: CheckpointHeader = serde_json::from_slice(header).map_err(|e| CoreError::CorruptHeader {
        context: context.to_string(),
        reason: e.to_string(),
    })?;
    h.model.validate()?;
    let n: usize = h.manifest.iter().map(|s| s.shape.iter().product::<usize>()).sum();
    let expected = n * 8;
    if payload.len() < expected {
        return Err(CoreError::Truncated {
            context: context.to_string(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(CoreError::ShapeMismatch {
            context: context.to_string(),
            reason: format!("payload has {} bytes, manifest needs {expected}", payload.len()),
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let params = ParamStore::from_flat(&h.manifest, &values)?;
    let model = Model {
        config: h.model.clone(),
        params,
    };
    Ok((model, h))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model,
    train: Option<&TrainConfig>,
    epoch: Option<usize>,
    metric: Option<f64>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model, train, epoch, metric)?).map_err(|e| CoreError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let model = Model::new(ModelConfig::default(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &model, Some(&TrainConfig::default()), Some(7), Some(0.8)).unwrap();
        let (back, h) = load_checkpoint(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!((h.epoch, h.metric), (Some(7), Some(0.8)));

        let bytes = encode_checkpoint(&model, None, None, None).unwrap();
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 8], "c"), Err(CoreError::Truncated { .. })));
        assert!(matches!(decode_checkpoint(&bytes[..20], "c"), Err(CoreError::CorruptHeader { .. })));
        let mut long = bytes.clone();
        long.extend_from_slice(&[0; 8]);
        assert!(matches!(decode_checkpoint(&long, "c"), Err(CoreError::ShapeMismatch { .. })));
    }
}
