mod common;

use causal_score::nn::{Dims, ForwardCache, MlpParams};
use causal_score::rng::seeded;
use causal_score::stats::sample_variance;
use causal_score::Matrix;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

use common::rel_err;

fn net(d: usize, m: usize, depth: usize, seed: u64) -> MlpParams {
    MlpParams::init(Dims::square(d, m, depth), &mut seeded(seed)).unwrap()
}

fn gaussian_vec(n: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Smallest preactivation magnitude of a pass; finite differences are only
/// trusted when it is comfortably away from zero.
fn kink_distance(cache: &ForwardCache) -> f64 {
    cache
        .preacts
        .iter()
        .flatten()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Points whose forward pass stays at least `margin` from every kink.
fn smooth_points(p: &MlpParams, count: usize, margin: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let x = gaussian_vec(p.dims().d_in, &mut rng);
        if kink_distance(&p.forward(&x).1) > margin {
            out.push(x);
        }
    }
    out
}

#[test]
fn init_shapes() {
    let p = net(5, 64, 3, 1);
    let shapes: Vec<_> = p.layers().iter().map(Matrix::shape).collect();
    assert_eq!(shapes, vec![(64, 5), (64, 64), (5, 64)]);
}

#[test]
fn hidden_init_variance_is_two_over_width() {
    let p = net(5, 4096, 2, 2);
    let var = sample_variance(p.layers()[0].as_slice());
    let target = 2.0 / 4096.0;
    assert!((var - target).abs() <= 0.05 * target, "{var} vs {target}");
}

#[test]
fn output_init_variance_is_one_over_input_dim() {
    let p = net(100, 256, 2, 3);
    let var = sample_variance(p.layers()[1].as_slice());
    assert!((var - 0.01).abs() <= 0.05 * 0.01, "{var}");
}

#[test]
fn invalid_dims_are_rejected() {
    assert!(MlpParams::init(Dims::square(3, 8, 1), &mut seeded(0)).is_err());
    assert!(MlpParams::init(Dims::square(3, 0, 3), &mut seeded(0)).is_err());
    assert!(MlpParams::init(Dims::square(0, 8, 3), &mut seeded(0)).is_err());
}

#[test]
fn positively_homogeneous() {
    let p = net(5, 64, 3, 4);
    let mut rng = seeded(5);
    for _ in 0..100 {
        let x = gaussian_vec(5, &mut rng);
        let y = p.eval(&x);
        for alpha in [0.01, 0.5, 2.0, 37.0] {
            let xa: Vec<f64> = x.iter().map(|v| alpha * v).collect();
            for (a, b) in p.eval(&xa).iter().zip(&y) {
                assert!((a - alpha * b).abs() <= 1e-9 * (alpha * b).abs().max(1e-12));
            }
        }
    }
}

#[test]
fn input_jacobian_matches_finite_differences() {
    let p = net(5, 64, 3, 6);
    let h = 1e-6;
    for x in smooth_points(&p, 100, 1e-3, 7) {
        let jac = p.input_jacobian(&p.forward(&x).1);
        for k in 0..5 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let (yp, ym) = (p.eval(&xp), p.eval(&xm));
            for j in 0..5 {
                let fd = (yp[j] - ym[j]) / (2.0 * h);
                assert!(rel_err(jac.get(j, k), fd) <= 1e-4, "({j},{k}) {} vs {fd}", jac.get(j, k));
            }
        }
    }
}

#[test]
fn jacobian_is_exact_within_a_linear_region() {
    let p = net(5, 64, 3, 8);
    let mut rng = seeded(9);
    for x in smooth_points(&p, 50, 1e-2, 10) {
        let (y, cache) = p.forward(&x);
        let jac = p.input_jacobian(&cache);
        let delta: Vec<f64> = gaussian_vec(5, &mut rng).iter().map(|v| v * 1e-5).collect();
        let xd: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let (yd, cd) = p.forward(&xd);
        assert_eq!(cd.masks, cache.masks, "step left the region");
        let jd = jac.matvec(&delta);
        for j in 0..5 {
            assert!(((yd[j] - y[j]) - jd[j]).abs() <= 1e-12);
        }
    }
}

#[test]
fn diagonal_agrees_with_full_jacobian() {
    let p = net(5, 64, 3, 11);
    let mut rng = seeded(12);
    for _ in 0..100 {
        let x = gaussian_vec(5, &mut rng);
        let cache = p.forward(&x).1;
        let jac = p.input_jacobian(&cache);
        let diag = p.jacobian_diag(&cache);
        for j in 0..5 {
            assert!((diag[j] - jac.get(j, j)).abs() <= 1e-12 * jac.get(j, j).abs().max(1.0));
        }
    }
}

#[test]
fn all_active_region_diagonal_is_plain_product() {
    // nonnegative weights and input keep every unit active
    let mut p = net(3, 8, 3, 13);
    for w in p.layers_mut() {
        for r in 0..w.rows() {
            w.row_mut(r).iter_mut().for_each(|v| *v = v.abs());
        }
    }
    let cache = p.forward(&[0.3, 1.2, 0.7]).1;
    assert!(cache.masks.iter().flatten().all(|&m| m));
    let product = p.layers()[2].matmul(&p.layers()[1].matmul(&p.layers()[0]));
    let diag = p.jacobian_diag(&cache);
    for j in 0..3 {
        assert!((diag[j] - product.get(j, j)).abs() <= 1e-12 * product.get(j, j).abs().max(1.0));
    }
}

#[test]
fn sign_masks_are_reproducible_from_preactivations() {
    let p = net(4, 32, 4, 14);
    let mut rng = seeded(15);
    for _ in 0..50 {
        let cache = p.forward(&gaussian_vec(4, &mut rng)).1;
        for (z, mask) in cache.preacts.iter().zip(&cache.masks) {
            let again: Vec<bool> = z.iter().map(|&v| v >= 0.0).collect();
            assert_eq!(&again, mask);
        }
    }
}

#[test]
fn input_gradient_of_each_output_is_a_jacobian_row() {
    let p = net(5, 32, 3, 16);
    let mut rng = seeded(17);
    for _ in 0..20 {
        let cache = p.forward(&gaussian_vec(5, &mut rng)).1;
        let jac = p.input_jacobian(&cache);
        for j in 0..5 {
            let mut e = vec![0.0; 5];
            e[j] = 1.0;
            let g = p.backward(&cache, &e).input;
            for k in 0..5 {
                assert!((g[k] - jac.get(j, k)).abs() <= 1e-12 * jac.get(j, k).abs().max(1.0));
            }
        }
    }
}

#[test]
fn weight_gradients_match_directional_finite_differences() {
    let p = net(5, 64, 3, 18);
    let mut rng = seeded(19);
    let h = 1e-6;
    let xs = smooth_points(&p, 5, 1e-2, 20);
    for x in &xs {
        let grad_y = gaussian_vec(5, &mut rng);
        let objective = |q: &MlpParams| -> f64 { q.eval(x).iter().zip(&grad_y).map(|(a, b)| a * b).sum() };
        let grads = p.backward(&p.forward(x).1, &grad_y);
        for _ in 0..20 {
            let dir: Vec<Matrix> = p
                .layers()
                .iter()
                .map(|w| Matrix::from_fn(w.rows(), w.cols(), |_, _| StandardNormal.sample(&mut rng)))
                .collect();
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus.apply(&dir, -h);
            minus.apply(&dir, h);
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let analytic = grads.dot(&dir);
            assert!(rel_err(analytic, fd) <= 1e-5, "{analytic} vs {fd}");
        }
    }
}

#[test]
fn two_layer_scalar_gradient_matches_hand_derivation() {
    let dims = Dims {
        d_in: 2,
        d_out: 1,
        width: 3,
        depth: 2,
    };
    let w1 = Matrix::from_vec(3, 2, vec![1.0, -2.0, 0.5, 0.5, -1.0, 0.0]);
    let w2 = Matrix::from_vec(1, 3, vec![2.0, -1.0, 3.0]);
    let p = MlpParams::from_layers(dims, vec![w1, w2]).unwrap();
    let x = [1.5, 0.25];
    let (y, cache) = p.forward(&x);
    // hidden = relu([1.0, 0.875, -1.5]) = [1.0, 0.875, 0]
    assert!((y[0] - (2.0 - 0.875)).abs() < 1e-15);
    let g = 0.5;
    let grads = p.backward(&cache, &[g]);
    let expect_w2 = [g * 1.0, g * 0.875, 0.0];
    assert_eq!(grads.layers[1].as_slice(), &expect_w2);
    // dW1 = (W2^T g * mask) x^T, mask = [1, 1, 0]
    let back = [2.0 * g, -1.0 * g, 0.0];
    let expect_w1: Vec<f64> = back.iter().flat_map(|b| x.iter().map(move |xi| b * xi)).collect();
    assert_eq!(grads.layers[0].as_slice(), expect_w1.as_slice());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let p = net(4, 16, 3, 21);
    let back = MlpParams::from_json(&p.to_json().unwrap()).unwrap();
    assert_eq!(back, p);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    p.save(&path).unwrap();
    assert_eq!(MlpParams::load(&path).unwrap(), p);
}

#[test]
fn checkpoint_with_wrong_shapes_is_rejected() {
    let p = net(3, 8, 2, 22);
    let mut doc: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
    doc["weights"][1].as_array_mut().unwrap().pop();
    assert!(MlpParams::from_json(&doc.to_string()).is_err());
    let mut doc: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
    doc["version"] = serde_json::json!(99);
    assert!(MlpParams::from_json(&doc.to_string()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn homogeneity_holds_for_random_nets(seed in 0u64..10_000, alpha in 1e-3f64..1e3, depth in 2usize..5) {
        let p = net(3, 16, depth, seed);
        let mut rng = seeded(seed + 1);
        let x = gaussian_vec(3, &mut rng);
        let y = p.eval(&x);
        let xa: Vec<f64> = x.iter().map(|v| alpha * v).collect();
        for (a, b) in p.eval(&xa).iter().zip(&y) {
            prop_assert!((a - alpha * b).abs() <= 1e-9 * (alpha * b).abs().max(1e-12));
        }
    }

    #[test]
    fn zero_input_maps_to_zero(seed in 0u64..10_000) {
        let p = net(4, 8, 3, seed);
        prop_assert!(p.eval(&[0.0; 4]).iter().all(|&v| v == 0.0));
    }
}
