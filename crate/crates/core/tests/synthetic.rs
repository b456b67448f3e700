//! Checks on the generator's planted signal with a handcrafted-feature
//! logistic-regression oracle.

use respnet_core::data::{generate_synthetic, MaskVolume, SynthConfig};
use respnet_eval::{roc_auc, ScoredCohort};

/// Voxels above 0.5 counted per slice before a slice is "occupied".
const OCCUPIED_MIN: usize = 0;

fn features(v: &MaskVolume) -> [f64; 2] {
    [v.blob_volume() as f64, v.occupied_slices(OCCUPIED_MIN) as f64]
}

/// Standardized features, plain gradient descent on the logistic loss.
fn logistic_fit(x: &[[f64; 2]], y: &[u8]) -> impl Fn(&[f64; 2]) -> f64 {
    let n = x.len() as f64;
    let mean: [f64; 2] = std::array::from_fn(|j| x.iter().map(|r| r[j]).sum::<f64>() / n);
    let sd: [f64; 2] = std::array::from_fn(|j| (x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-9));
    let z = move |r: &[f64; 2]| -> [f64; 2] { std::array::from_fn(|j| (r[j] - mean[j]) / sd[j]) };
    let mut w = [0.0; 3];
    for _ in 0..2000 {
        let mut g = [0.0; 3];
        for (r, &t) in x.iter().zip(y) {
            let f = z(r);
            let p = 1.0 / (1.0 + (-(w[0] + w[1] * f[0] + w[2] * f[1])).exp());
            let e = p - f64::from(t);
            g[0] += e;
            g[1] += e * f[0];
            g[2] += e * f[1];
        }
        for k in 0..3 {
            w[k] -= 0.5 * g[k] / n;
        }
    }
    move |r: &[f64; 2]| {
        let f = z(r);
        1.0 / (1.0 + (-(w[0] + w[1] * f[0] + w[2] * f[1])).exp())
    }
}

fn oracle_auc(delta: f64, seed: u64) -> f64 {
    let cfg = SynthConfig { delta, seed, ..SynthConfig::default() };
    let vols = generate_synthetic(&cfg).unwrap();
    let (train, test) = vols.split_at(vols.len() / 2);
    let x: Vec<[f64; 2]> = train.iter().map(features).collect();
    let y: Vec<u8> = train.iter().map(|v| v.label).collect();
    let model = logistic_fit(&x, &y);
    let probs: Vec<f64> = test.iter().map(|v| model(&features(v))).collect();
    let labels: Vec<u8> = test.iter().map(|v| v.label).collect();
    roc_auc(&ScoredCohort::from_scores(&probs, &labels).unwrap()).unwrap()
}

#[test]
fn strong_signal_is_separable_by_blob_features() {
    let auc = oracle_auc(respnet_core::data::STRONG_DELTA, 11);
    assert!(auc >= 0.95, "oracle AUC {auc}");
}

#[test]
fn null_signal_gives_chance_oracle() {
    let aucs: Vec<f64> = (0..3).map(|s| oracle_auc(0.0, 20 + s)).collect();
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    assert!((0.35..=0.65).contains(&mean), "null oracle AUCs {aucs:?}");
}

#[test]
fn generation_is_a_pure_function_of_the_config() {
    let cfg = SynthConfig { n_patients: 12, image_size: 32, slices: 8, seed: 5, ..SynthConfig::default() };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let vols = generate_synthetic(&cfg).unwrap();
    respnet_core::data::DatasetManifest::write_volumes(a.path(), &vols, Some(cfg.clone())).unwrap().save(a.path()).unwrap();
    let vols = generate_synthetic(&cfg).unwrap();
    respnet_core::data::DatasetManifest::write_volumes(b.path(), &vols, Some(cfg)).unwrap().save(b.path()).unwrap();
    for entry in std::fs::read_dir(a.path().join("volumes")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            std::fs::read(a.path().join("volumes").join(&name)).unwrap(),
            std::fs::read(b.path().join("volumes").join(&name)).unwrap()
        );
    }
    assert_eq!(std::fs::read(a.path().join("manifest.json")).unwrap(), std::fs::read(b.path().join("manifest.json")).unwrap());
}

#[test]
fn voxels_stay_in_unit_interval_and_classes_are_balanced() {
    let cfg = SynthConfig { n_patients: 40, image_size: 32, slices: 8, seed: 9, ..SynthConfig::default() };
    let vols = generate_synthetic(&cfg).unwrap();
    assert!(vols.iter().all(|v| v.voxels().iter().all(|x| (0.0..=1.0).contains(x))));
    let pos = vols.iter().filter(|v| v.label == 1).count();
    assert_eq!(pos, cfg.n_positive());
}
