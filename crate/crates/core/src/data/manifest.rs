use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::SynthConfig;
use super::volume::{read_volume, write_volume, MaskVolume};
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientEntry {
    pub id: String,
    pub label: u8,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Empty slices appended to reach the dataset's slice count.
    #[serde(default)]
    pub padded_slices: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub fractions: [f64; 3],
    pub seed: u64,
    /// Splits lacking one of the two classes.
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub height: usize,
    pub width: usize,
    pub slices: usize,
    pub patients: Vec<PatientEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitInfo>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOLUME_DIR: &str = "volumes";

impl DatasetManifest {
    /// Writes every volume under `dir/volumes/`, zero-padding shorter ones
    /// to the longest slice count, and returns the (unsaved) manifest.
    pub fn write_volumes(dir: &Path, volumes: &[MaskVolume], synth: Option<SynthConfig>) -> Result<Self> {
        let first = volumes
            .first()
            .ok_or_else(|| CoreError::Contract("no volumes to write".into()))?;
        let [height, width, _] = first.shape();
        let slices = volumes.iter().map(MaskVolume::n_slices).max().unwrap_or(0);
        let vdir = dir.join(VOLUME_DIR);
        std::fs::create_dir_all(&vdir).map_err(|e| CoreError::io(&vdir, e))?;
        let mut patients = Vec::with_capacity(volumes.len());
        for v in volumes {
            let [h, w, s] = v.shape();
            if (h, w) != (height, width) {
                return Err(CoreError::ShapeMismatch {
                    context: v.patient_id.clone(),
                    reason: format!("slice size {h}×{w}, dataset uses {height}×{width}"),
                });
            }
            let rel = PathBuf::from(VOLUME_DIR).join(format!("{}.vol", v.patient_id));
            write_volume(dir.join(&rel), &v.zero_pad(slices)?)?;
            patients.push(PatientEntry {
                id: v.patient_id.clone(),
                label: v.label,
                path: rel,
                split: None,
                padded_slices: slices - s,
            });
        }
        Ok(Self {
            height,
            width,
            slices,
            patients,
            synth,
            split: None,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json).map_err(|e| CoreError::io(&path, e))?;
        Ok(path)
    }

    /// Accepts either the manifest file or its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file).map_err(|e| CoreError::io(&file, e))?;
        let m: Self = serde_json::from_str(&text)?;
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok((m, dir))
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for p in &self.patients {
            if !ids.insert(&p.id) {
                return Err(CoreError::Contract(format!("patient {} listed twice", p.id)));
            }
            if p.label > 1 {
                return Err(CoreError::Contract(format!("patient {}: label {}", p.id, p.label)));
            }
        }
        Ok(())
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &PatientEntry> {
        self.patients.iter().filter(move |p| p.split == Some(split))
    }

    /// Reads every volume of `split` and checks it against the header.
    pub fn load_split(&self, dir: &Path, split: Split) -> Result<Vec<MaskVolume>> {
        self.entries(split)
            .map(|p| {
                let v = read_volume(dir.join(&p.path))?;
                if v.shape() != [self.height, self.width, self.slices] || v.label != p.label || v.patient_id != p.id {
                    return Err(CoreError::ShapeMismatch {
                        context: p.id.clone(),
                        reason: "volume file disagrees with manifest".into(),
                    });
                }
                Ok(v)
            })
            .collect()
    }
}

/// Stratified assignment to train/val/test. Each class is shuffled and cut
/// at the cumulative fractions; a split missing a class is recorded in the
/// warnings.
pub fn split_dataset(manifest: &DatasetManifest, fractions: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CoreError::Config(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let mut out = manifest.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..out.patients.len()).filter(|&i| out.patients[i].label == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let cut1 = (n * fractions[0]).round() as usize;
        let cut2 = ((n * (fractions[0] + fractions[1])).round() as usize).max(cut1);
        for (k, &i) in idx.iter().enumerate() {
            out.patients[i].split = Some(if k < cut1 {
                Split::Train
            } else if k < cut2 {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    let warnings = Split::ALL
        .into_iter()
        .filter(|&s| {
            let labels: Vec<u8> = out.entries(s).map(|p| p.label).collect();
            !(labels.contains(&0) && labels.contains(&1))
        })
        .map(|s| format!("{} split lacks one of the two classes", s.name()))
        .collect();
    out.split = Some(SplitInfo { fractions, seed, warnings });
    Ok(out)
}
