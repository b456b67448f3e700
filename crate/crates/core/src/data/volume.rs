use std::path::Path;

use respnet_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{CoreError, Result};

/// One patient's soft lesion mask, `H × W × S` values in `[0, 1]` stored
/// with the slice index varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskVolume {
    pub patient_id: String,
    pub label: u8,
    shape: [usize; 3],
    voxels: Vec<f32>,
}

impl MaskVolume {
    pub fn new(patient_id: String, label: u8, shape: [usize; 3], voxels: Vec<f32>) -> Result<Self> {
        if label > 1 {
            return Err(CoreError::Contract(format!("{patient_id}: label {label} is not 0 or 1")));
        }
        if shape.contains(&0) || shape.iter().product::<usize>() != voxels.len() {
            return Err(CoreError::ShapeMismatch {
                context: patient_id,
                reason: format!("shape {shape:?} does not hold {} voxels", voxels.len()),
            });
        }
        if let Some(v) = voxels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CoreError::Contract(format!("{patient_id}: voxel value {v} outside [0, 1]")));
        }
        Ok(Self {
            patient_id,
            label,
            shape,
            voxels,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn n_slices(&self) -> usize {
        self.shape[2]
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn get(&self, h: usize, w: usize, s: usize) -> f32 {
        self.voxels[(h * self.shape[1] + w) * self.shape[2] + s]
    }

    /// Axial slice `s` as a `[H × W × 1]` tensor.
    pub fn slice(&self, s: usize) -> Result<Tensor> {
        let [h, w, n] = self.shape;
        if s >= n {
            return Err(CoreError::Contract(format!("slice {s} out of range for {n} slices")));
        }
        let data = self.voxels[s..].iter().step_by(n).map(|&v| f64::from(v)).collect();
        Ok(Tensor::new(vec![h, w, 1], data)?)
    }

    pub fn slices(&self) -> Result<Vec<Tensor>> {
        (0..self.n_slices()).map(|s| self.slice(s)).collect()
    }

    /// Checks in-plane size against the encoder and slice count against the
    /// positional table.
    pub fn check_geometry(&self, cfg: &ModelConfig) -> Result<()> {
        let [h, w, s] = self.shape;
        let size = cfg.encoder.image_size;
        if h != size || w != size {
            return Err(CoreError::ShapeMismatch {
                context: self.patient_id.clone(),
                reason: format!("slice size {h}×{w}, model expects {size}×{size}"),
            });
        }
        if s > cfg.aggregator.max_slices {
            return Err(CoreError::Capacity {
                slices: s,
                capacity: cfg.aggregator.max_slices,
            });
        }
        Ok(())
    }

    /// Reorders slices: output slice `i` is input slice `perm[i]`.
    pub fn permute_slices(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_slices();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(CoreError::Contract(format!("{perm:?} is not a permutation of {n} slices")));
        }
        let voxels = self
            .voxels
            .chunks(n)
            .flat_map(|col| perm.iter().map(|&p| col[p]))
            .collect();
        Self::new(self.patient_id.clone(), self.label, self.shape, voxels)
    }

    /// Appends empty slices up to `slices` total.
    pub fn zero_pad(&self, slices: usize) -> Result<Self> {
        let n = self.n_slices();
        if slices < n {
            return Err(CoreError::Contract(format!("cannot pad {n} slices down to {slices}")));
        }
        let voxels = self
            .voxels
            .chunks(n)
            .flat_map(|col| col.iter().copied().chain(std::iter::repeat_n(0.0, slices - n)))
            .collect();
        Self::new(self.patient_id.clone(), self.label, [self.shape[0], self.shape[1], slices], voxels)
    }

    pub fn total_mass(&self) -> f64 {
        self.voxels.iter().map(|&v| f64::from(v)).sum()
    }

    /// Number of voxels at or above 0.5.
    pub fn blob_volume(&self) -> usize {
        self.voxels.iter().filter(|&&v| v >= 0.5).count()
    }

    /// Number of slices with more than `min_voxels` voxels at or above 0.5.
    pub fn occupied_slices(&self, min_voxels: usize) -> usize {
        let n = self.n_slices();
        let mut count = vec![0usize; n];
        for col in self.voxels.chunks(n) {
            for (c, &v) in count.iter_mut().zip(col) {
                *c += usize::from(v >= 0.5);
            }
        }
        count.iter().filter(|&&c| c > min_voxels).count()
    }
}

const VOLUME_MAGIC: &[u8; 8] = b"RSPNVOL1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeHeader {
    shape: [usize; 3],
    dtype: String,
    patient_id: String,
    label: u8,
    n_values: usize,
}

/// Magic, little-endian `u64` header length, JSON header, then the payload.
pub(crate) fn write_framed(magic: &[u8; 8], header: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(payload);
    out
}

/// Splits a framed buffer into `(header, payload)`.
pub(crate) fn read_framed<'a>(magic: &[u8; 8], bytes: &'a [u8], context: &str) -> Result<(&'a [u8], &'a [u8])> {
    let corrupt = |reason: &str| CoreError::CorruptHeader {
        context: context.to_string(),
        reason: reason.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(corrupt("missing magic bytes"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("header length exceeds file size"))?;
    Ok((&bytes[16..end], &bytes[end..]))
}

pub fn encode_volume_bytes(v: &MaskVolume) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&VolumeHeader {
        shape: v.shape,
        dtype: "f32".into(),
        patient_id: v.patient_id.clone(),
        label: v.label,
        n_values: v.voxels.len(),
    })?;
    let payload: Vec<u8> = v.voxels.iter().flat_map(|x| x.to_le_bytes()).collect();
    Ok(write_framed(VOLUME_MAGIC, &header, &payload))
}

pub fn decode_volume_bytes(bytes: &[u8], context: &str) -> Result<MaskVolume> {
    let (header, payload) = read_framed(VOLUME_MAGIC, bytes, context)?;
    let h: VolumeHeader = serde_json::from_slice(header).map_err(|e| CoreError::CorruptHeader {
        context: context.to_string(),
        reason: e.to_string(),
    })?;
    if h.dtype != "f32" {
        return Err(CoreError::CorruptHeader {
            context: context.to_string(),
            reason: format!("unsupported dtype {}", h.dtype),
        });
    }
    if h.shape.iter().product::<usize>() != h.n_values {
        return Err(CoreError::ShapeMismatch {
            context: context.to_string(),
            reason: format!("shape {:?} declares {} values, header says {}", h.shape, h.shape.iter().product::<usize>(), h.n_values),
        });
    }
    let expected = h.n_values * 4;
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
            reason: format!("payload has {} bytes, shape needs {expected}", payload.len()),
        });
    }
    let voxels = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    MaskVolume::new(h.patient_id, h.label, h.shape, voxels)
}

pub fn write_volume(path: impl AsRef<Path>, v: &MaskVolume) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_volume_bytes(v)?).map_err(|e| CoreError::io(path, e))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<MaskVolume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    decode_volume_bytes(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MaskVolume {
        let voxels = (0..4 * 4 * 3).map(|i| (i % 7) as f32 / 7.0).collect();
        MaskVolume::new("p1".into(), 1, [4, 4, 3], voxels).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.bin");
        let v = sample();
        write_volume(&path, &v).unwrap();
        assert_eq!(read_volume(&path).unwrap(), v);
    }

    #[test]
    fn distinct_decode_errors() {
        let bytes = encode_volume_bytes(&sample()).unwrap();
        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(decode_volume_bytes(truncated, "t"), Err(CoreError::Truncated { .. })));

        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(decode_volume_bytes(&extra, "t"), Err(CoreError::ShapeMismatch { .. })));

        let mut garbled = bytes.clone();
        garbled[17] = b'#';
        assert!(matches!(decode_volume_bytes(&garbled, "t"), Err(CoreError::CorruptHeader { .. })));
        assert!(matches!(decode_volume_bytes(b"nope", "t"), Err(CoreError::CorruptHeader { .. })));

        let header = br#"{"shape":[4,4,2],"dtype":"f32","patient_id":"p","label":0,"n_values":48}"#;
        let framed = write_framed(VOLUME_MAGIC, header, &[0u8; 48 * 4]);
        assert!(matches!(decode_volume_bytes(&framed, "t"), Err(CoreError::ShapeMismatch { .. })));
    }

    #[test]
    fn validation() {
        assert!(MaskVolume::new("p".into(), 2, [1, 1, 1], vec![0.0]).is_err());
        assert!(MaskVolume::new("p".into(), 0, [1, 1, 1], vec![1.5]).is_err());
        assert!(MaskVolume::new("p".into(), 0, [1, 1, 2], vec![0.5]).is_err());
    }

    #[test]
    fn slicing_permuting_padding() {
        let v = sample();
        let s1 = v.slice(1).unwrap();
        assert_eq!(s1.shape(), [4, 4, 1]);
        assert_eq!(s1.data()[5], f64::from(v.get(1, 1, 1)));
        let p = v.permute_slices(&[2, 0, 1]).unwrap();
        assert_eq!(p.slice(0).unwrap(), v.slice(2).unwrap());
        assert!(v.permute_slices(&[0, 0, 1]).is_err());
        let padded = v.zero_pad(5).unwrap();
        assert_eq!(padded.slice(1).unwrap(), v.slice(1).unwrap());
        assert!(padded.slice(4).unwrap().data().iter().all(|&x| x == 0.0));
        assert_eq!(padded.total_mass(), v.total_mass());
    }
}
