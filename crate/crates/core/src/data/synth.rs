use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::volume::MaskVolume;
use crate::error::{CoreError, Result};

/// Planted-signal strength used for "strong signal" runs.
pub const STRONG_DELTA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_patients: usize,
    /// Fraction of class-1 patients.
    pub positive_fraction: f64,
    /// Relative growth of axial extent and in-plane elongation for class 1.
    pub delta: f64,
    /// Standard deviation of additive voxel noise.
    pub noise: f64,
    pub image_size: usize,
    pub slices: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 280,
            positive_fraction: 147.0 / 280.0,
            delta: STRONG_DELTA,
            noise: 0.02,
            image_size: 64,
            slices: 16,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.n_patients < 4 {
            return bad(format!("need at least 4 patients, got {}", self.n_patients));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return bad(format!("positive_fraction must lie in (0, 1), got {}", self.positive_fraction));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be >= 0, got {}", self.delta));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        if self.image_size < 16 || self.slices < 4 {
            return bad(format!("volume {}×{}×{} too small", self.image_size, self.image_size, self.slices));
        }
        Ok(())
    }

    pub fn n_positive(&self) -> usize {
        ((self.n_patients as f64 * self.positive_fraction).round() as usize).clamp(1, self.n_patients - 1)
    }
}

/// Edge softness of the blobs, in units of normalized radius.
const EDGE: f64 = 0.12;

/// Axial spread of blob centres around the patient's lesion centre.
const Z_JITTER: f64 = 1.0;

struct Blob {
    center: [f64; 3],
    /// In-plane semi-axes (pixels) and axial semi-axis (slices).
    axes: [f64; 3],
    angle: f64,
}

impl Blob {
    /// Blobs of one patient cluster around the axial position `z_center`.
    fn sample(rng: &mut ChaCha8Rng, cfg: &SynthConfig, label: u8, z_center: f64) -> Self {
        let size = cfg.image_size as f64;
        let grow = if label == 1 { 1.0 + cfg.delta } else { 1.0 };
        let major = size * rng.random_range(0.10..0.18);
        let elongation = rng.random_range(1.0..1.3) * grow;
        let axial = rng.random_range(1.4..2.0) * grow;
        Self {
            center: [
                rng.random_range(0.3 * size..0.7 * size),
                rng.random_range(0.3 * size..0.7 * size),
                z_center + rng.random_range(-Z_JITTER..Z_JITTER),
            ],
            axes: [major, major / elongation, axial],
            angle: rng.random_range(0.0..std::f64::consts::PI),
        }
    }

    fn value(&self, h: f64, w: f64, s: f64) -> f64 {
        let (dy, dx, dz) = (h - self.center[0], w - self.center[1], s - self.center[2]);
        let (sin, cos) = self.angle.sin_cos();
        let u = (cos * dx + sin * dy) / self.axes[0];
        let v = (-sin * dx + cos * dy) / self.axes[1];
        let z = dz / self.axes[2];
        let r = (u * u + v * v + z * z).sqrt();
        1.0 / (1.0 + ((r - 1.0) / EDGE).exp())
    }
}

/// One patient's volume from its own generator stream.
fn patient(cfg: &SynthConfig, index: usize, label: u8) -> Result<MaskVolume> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let n_blobs = rng.random_range(1..=3);
    let z_span = cfg.slices as f64 - 1.0;
    let z_center = rng.random_range(0.3 * z_span..=0.7 * z_span);
    let blobs: Vec<Blob> = (0..n_blobs).map(|_| Blob::sample(&mut rng, cfg, label, z_center)).collect();
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| CoreError::Config(e.to_string()))?;
    let (n, s) = (cfg.image_size, cfg.slices);
    let mut voxels = Vec::with_capacity(n * n * s);
    for h in 0..n {
        for w in 0..n {
            for z in 0..s {
                let v = blobs
                    .iter()
                    .map(|b| b.value(h as f64, w as f64, z as f64))
                    .fold(0.0, f64::max);
                let v = if cfg.noise > 0.0 { v + noise.sample(&mut rng) } else { v };
                voxels.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    MaskVolume::new(format!("syn{index:04}"), label, [n, n, s], voxels)
}

/// Soft-mask volumes with 1–3 ellipsoidal blobs each. Class-1 blobs are
/// longer along the slice axis and more elongated in-plane by a factor
/// `1 + delta`. Output is a pure function of `cfg`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<MaskVolume>> {
    cfg.validate()?;
    let mut labels = vec![0u8; cfg.n_patients];
    labels[..cfg.n_positive()].fill(1);
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    labels.iter().enumerate().map(|(i, &y)| patient(cfg, i, y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(delta: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            n_patients: 12,
            delta,
            seed,
            image_size: 32,
            slices: 8,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_balanced() {
        let a = generate_synthetic(&small(0.5, 3)).unwrap();
        let b = generate_synthetic(&small(0.5, 3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic(&small(0.5, 4)).unwrap());
        assert_eq!(a.iter().filter(|v| v.label == 1).count(), small(0.5, 3).n_positive());
        assert!(a.iter().all(|v| v.voxels().iter().all(|x| (0.0..=1.0).contains(x))));
        assert!(a.iter().all(|v| v.total_mass() > 1.0));
    }

    #[test]
    fn invalid_configs() {
        assert!(generate_synthetic(&SynthConfig { n_patients: 3, ..small(0.0, 0) }).is_err());
        assert!(generate_synthetic(&SynthConfig { delta: -0.1, ..small(0.0, 0) }).is_err());
        assert!(generate_synthetic(&SynthConfig { positive_fraction: 1.0, ..small(0.0, 0) }).is_err());
    }

    #[test]
    fn class_one_is_longer_axially() {
        let cfg = SynthConfig {
            n_patients: 60,
            ..small(STRONG_DELTA, 9)
        };
        let vols = generate_synthetic(&cfg).unwrap();
        let mean_extent = |y: u8| {
            let v: Vec<f64> = vols.iter().filter(|v| v.label == y).map(|v| v.occupied_slices(2) as f64).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean_extent(1) > mean_extent(0) + 1.0);
    }
}
