use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use respnet_autodiff::{finite_diff_check, Graph, Result, Tensor, Var};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Reduces any tensor to a scalar with a fixed random projection so every
/// output coordinate contributes a distinct weight.
fn project(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = random(&mut rng, g.shape(x), 1.0);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    g.sum_all(p)
}

fn check(name: &str, inputs: &[Tensor], seed: u64, f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
    let r = finite_diff_check(|g, v| { let y = f(g, v)?; project(g, y, seed) }, inputs, STEP).unwrap();
    assert!(r.max_rel_error < TOL, "{name} seed {seed}: {r:?}");
}

#[test]
fn every_layer_matches_finite_differences_over_20_seeds() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[3, 4], 1.0);
        let b = random(&mut rng, &[4, 5], 1.0);
        check("matmul", &[a.clone(), b], seed, |g, v| g.matmul(v[0], v[1]));

        let x = random(&mut rng, &[2, 3, 4], 1.0);
        let y = random(&mut rng, &[2, 5, 4], 1.0);
        check("batch_matmul_t", &[x.clone(), y], seed, |g, v| g.batch_matmul(v[0], v[1], true));
        let z = random(&mut rng, &[2, 4, 3], 1.0);
        check("batch_matmul", &[x.clone(), z], seed, |g, v| g.batch_matmul(v[0], v[1], false));

        check("gelu", &[random(&mut rng, &[7], 3.0)], seed, |g, v| g.gelu(v[0]));
        check("softmax", &[random(&mut rng, &[3, 5], 2.0)], seed, |g, v| g.softmax(v[0]));

        let ln_in = random(&mut rng, &[4, 6], 2.0);
        let gamma = random(&mut rng, &[6], 1.5);
        let beta = random(&mut rng, &[6], 1.0);
        check("layer_norm", &[ln_in, gamma, beta], seed, |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));

        check("l2_normalize", &[random(&mut rng, &[3, 4], 1.0)], seed, |g, v| g.l2_normalize(v[0]));
        let logits = random(&mut rng, &[4, 2], 3.0);
        check("cross_entropy", &[logits], seed, |g, v| g.cross_entropy(v[0], &[0, 1, 1, 0]));

        check("shape ops", std::slice::from_ref(&x), seed, |g, v| {
            let p = g.permute(v[0], &[2, 0, 1])?;
            let n = g.narrow(p, 0, 1, 2)?;
            let c = g.concat(&[n, p], 0)?;
            let r = g.reshape(c, &[6, 6])?;
            let t = g.transpose(r)?;
            let s = g.index_select(t, &[0, 3, 3, 5])?;
            g.mean(s, 1)
        });

        let bias = random(&mut rng, &[4], 1.0);
        check("broadcast/arith", &[x.clone(), bias], seed, |g, v| {
            let y = g.add_broadcast(v[0], v[1])?;
            let sq = g.square(y)?;
            let s = g.add_scalar(sq, 0.5)?;
            let r = g.sqrt(s)?;
            let d = g.sub(r, v[0])?;
            g.scale(d, 0.7)
        });

        // fixed dropout mask: each evaluation replays the same seed
        check("dropout", &[random(&mut rng, &[10], 1.0)], seed, move |g, v| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            g.dropout(v[0], 0.3, true, &mut r)
        });
    }
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(
        row in prop::collection::vec(-50.0f64..50.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let n = row.len();
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(row.clone()).unwrap());
        let shifted = g.constant(Tensor::vector(row.iter().map(|v| v + shift).collect()).unwrap());
        let p = g.softmax(x).unwrap();
        let q = g.softmax(shifted).unwrap();
        let total: f64 = g.data(p).iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for i in 0..n {
            prop_assert!((g.data(p)[i] - g.data(q)[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardises_rows(row in prop::collection::vec(-1000.0f64..1000.0, 2..16)) {
        let d = row.len();
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        // variance far above eps, so var/(var+eps) is within 1e-8 of 1
        prop_assume!(var > 2000.0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(row).unwrap());
        let gamma = g.constant(Tensor::full(vec![d], 1.0));
        let beta = g.constant(Tensor::zeros(vec![d]));
        let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
        let out = g.data(y);
        let m = out.iter().sum::<f64>() / d as f64;
        let v = out.iter().map(|o| (o - m).powi(2)).sum::<f64>() / d as f64;
        prop_assert!(m.abs() < 1e-10);
        prop_assert!((v - 1.0).abs() < 1e-8);
    }

    #[test]
    fn dropout_eval_mode_is_bitwise_identity(
        data in prop::collection::vec(-1e6f64..1e6, 1..32),
        rate in 0.0f64..0.99,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(data.clone()).unwrap());
        let y = g.dropout(x, rate, false, &mut rng).unwrap();
        prop_assert_eq!(g.data(y), data.as_slice());
    }
}
