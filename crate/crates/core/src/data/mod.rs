//! Mask volumes, their file format, the synthetic generator and dataset
//! manifests with stratified splits.

pub mod manifest;
pub mod synth;
pub mod volume;

pub use manifest::{split_dataset, DatasetManifest, PatientEntry, Split, SplitInfo};
pub use synth::{generate_synthetic, SynthConfig, STRONG_DELTA};
pub use volume::{decode_volume_bytes, encode_volume_bytes, read_volume, write_volume, MaskVolume};
