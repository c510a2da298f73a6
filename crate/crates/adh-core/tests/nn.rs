//! Network forward/backward correctness, the optimizer recurrence, and
//! checkpoint round-trips.

use adh_core::losses::{batch_loss_and_grad, LossKind};
use adh_core::nn::{load_net, save_net, Activation, DenseNet, Gradients, Layer, LrSchedule, Sgd};
use adh_core::Error;
use ndarray::{array, Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_identity_net(w: f64, b: f64) -> DenseNet {
    let layer = Layer {
        weights: array![[w]],
        bias: Array1::from_vec(vec![b]),
        activation: Activation::Identity,
    };
    DenseNet::from_layers(1, vec![layer]).unwrap()
}

/// A copy of `net` with one weight nudged by `delta`, for finite differences.
fn perturbed(net: &DenseNet, layer: usize, r: usize, c: usize, delta: f64) -> DenseNet {
    let mut layers: Vec<Layer> = net.layers().to_vec();
    layers[layer].weights[[r, c]] += delta;
    DenseNet::from_layers(net.input_dim(), layers).unwrap()
}

#[test]
fn forward_matches_hand_computation() {
    // 2 -> 2 (ReLU) -> 1 (identity), all weights chosen so every intermediate
    // is exactly representable.
    let hidden = Layer {
        weights: array![[1.0, -1.0], [0.5, 0.5]],
        bias: Array1::from_vec(vec![0.0, -1.0]),
        activation: Activation::Relu,
    };
    let out = Layer {
        weights: array![[2.0, -3.0]],
        bias: Array1::from_vec(vec![0.25]),
        activation: Activation::Identity,
    };
    let net = DenseNet::from_layers(2, vec![hidden, out]).unwrap();
    let x = array![[1.0, 2.0], [-1.0, 0.0]];
    // Row 0: pre = (1*1 + -1*2, 0.5*1 + 0.5*2 - 1) = (-1, 0.5) -> relu (0, 0.5)
    //        out = 2*0 - 3*0.5 + 0.25 = -1.25
    // Row 1: pre = (-1, -1.5) -> relu (0, 0) -> out = 0.25
    let y = net.forward_logits(&x).unwrap();
    assert_eq!(y, array![[-1.25], [0.25]]);
}

#[test]
fn backward_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let net = DenseNet::new(3, &[4], 3, &mut rng).unwrap();
    let x = Array2::from_shape_fn((5, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
    let labels = vec![0usize, 2, 1, 1, 0];
    let (logits, cache) = net.forward(&x).unwrap();
    let (_, d_logits) = batch_loss_and_grad(LossKind::CrossEntropy, &logits, &labels).unwrap();
    let (grads, _) = net.backward(&cache, &d_logits).unwrap();

    let loss_at = |n: &DenseNet| {
        let z = n.forward_logits(&x).unwrap();
        batch_loss_and_grad(LossKind::CrossEntropy, &z, &labels).unwrap().0
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (l, layer_grads) in grads.layers.iter().enumerate() {
        for r in 0..layer_grads.d_weights.nrows() {
            for c in 0..layer_grads.d_weights.ncols() {
                let up = loss_at(&perturbed(&net, l, r, c, h));
                let down = loss_at(&perturbed(&net, l, r, c, -h));
                let numeric = (up - down) / (2.0 * h);
                let analytic = layer_grads.d_weights[[r, c]];
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max((analytic - numeric).abs() / denom);
            }
        }
    }
    assert!(worst < 1e-5, "worst relative gradient error {worst}");
}

#[test]
fn input_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let net = DenseNet::new(3, &[4], 2, &mut rng).unwrap();
    let x = array![[0.31, -0.62, 0.47]];
    let labels = vec![1usize];
    let (logits, cache) = net.forward(&x).unwrap();
    let (_, d_logits) = batch_loss_and_grad(LossKind::CrossEntropy, &logits, &labels).unwrap();
    let (_, d_input) = net.backward(&cache, &d_logits).unwrap();

    let h = 1e-6;
    for j in 0..3 {
        let mut up_x = x.clone();
        up_x[[0, j]] += h;
        let mut down_x = x.clone();
        down_x[[0, j]] -= h;
        let up = batch_loss_and_grad(LossKind::CrossEntropy, &net.forward_logits(&up_x).unwrap(), &labels)
            .unwrap()
            .0;
        let down = batch_loss_and_grad(LossKind::CrossEntropy, &net.forward_logits(&down_x).unwrap(), &labels)
            .unwrap()
            .0;
        let numeric = (up - down) / (2.0 * h);
        let analytic = d_input[[0, j]];
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        assert!(
            (analytic - numeric).abs() / denom < 1e-5,
            "input grad {j}: analytic {analytic}, numeric {numeric}"
        );
    }
}

#[test]
fn backward_rejects_stale_cache() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut net = DenseNet::new(2, &[3], 2, &mut rng).unwrap();
    let x = array![[0.5, -0.5]];
    let (logits, cache) = net.forward(&x).unwrap();
    let (_, d_logits) = batch_loss_and_grad(LossKind::CrossEntropy, &logits, &[0]).unwrap();
    // Any optimizer step bumps the revision, invalidating the cache.
    let grads = Gradients::zeros_like(&net);
    let mut opt = Sgd::new(0.1, 0.0, 0.0, LrSchedule::Constant).unwrap();
    opt.step(&mut net, &grads, 0).unwrap();
    match net.backward(&cache, &d_logits) {
        Err(Error::Usage(msg)) => assert!(msg.contains("stale"), "unexpected message: {msg}"),
        other => panic!("expected a usage error, got {other:?}"),
    }
}

#[test]
fn backward_rejects_wrong_gradient_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = DenseNet::new(2, &[], 3, &mut rng).unwrap();
    let x = array![[0.5, -0.5]];
    let (_, cache) = net.forward(&x).unwrap();
    let bad = Array2::zeros((2, 3));
    assert!(matches!(net.backward(&cache, &bad), Err(Error::Shape(_))));
}

#[test]
fn sgd_matches_hand_recurrence() {
    // Update rule per step: g = grad + wd*w; v <- mu*v + g; w <- w - lr*(g + mu*v).
    let (lr, mu, wd) = (0.1, 0.9, 0.01);
    let mut net = tiny_identity_net(2.0, -1.0);
    let mut opt = Sgd::new(lr, mu, wd, LrSchedule::Constant).unwrap();

    let grad_at = |g_w: f64, g_b: f64| Gradients {
        layers: vec![adh_core::nn::LayerGrads {
            d_weights: array![[g_w]],
            d_bias: Array1::from_vec(vec![g_b]),
        }],
    };

    let (mut w, mut vw) = (2.0f64, 0.0f64);
    let (mut b, mut vb) = (-1.0f64, 0.0f64);
    let grads = [(0.5, -0.25), (-1.0, 0.125)];
    for (step, &(gw, gb)) in grads.iter().enumerate() {
        opt.step(&mut net, &grad_at(gw, gb), step).unwrap();
        let g = gw + wd * w;
        vw = mu * vw + g;
        w -= lr * (g + mu * vw);
        let gb_full = gb + wd * b;
        vb = mu * vb + gb_full;
        b -= lr * (gb_full + mu * vb);
    }
    assert!((net.layers()[0].weights[[0, 0]] - w).abs() < 1e-15, "weight after two steps");
    assert!((net.layers()[0].bias[0] - b).abs() < 1e-15, "bias after two steps");
}

#[test]
fn sgd_respects_the_schedule() {
    // With momentum and decay off, each step subtracts lr(t) * grad exactly.
    let mut net = tiny_identity_net(1.0, 0.0);
    let sched = LrSchedule::MultiStep { milestones: vec![1], factor: 0.5 };
    let mut opt = Sgd::new(1.0, 0.0, 0.0, sched).unwrap();
    let unit = Gradients {
        layers: vec![adh_core::nn::LayerGrads {
            d_weights: array![[1.0]],
            d_bias: Array1::from_vec(vec![0.0]),
        }],
    };
    opt.step(&mut net, &unit, 0).unwrap(); // lr 1.0 -> w = 0
    opt.step(&mut net, &unit, 1).unwrap(); // lr 0.5 -> w = -0.5
    assert_eq!(net.layers()[0].weights[[0, 0]], -0.5);
}

#[test]
fn sgd_rejects_mismatched_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut net = DenseNet::new(2, &[3], 2, &mut rng).unwrap();
    let other = DenseNet::new(2, &[4], 2, &mut rng).unwrap();
    let mut opt = Sgd::new(0.1, 0.9, 0.0, LrSchedule::Constant).unwrap();
    let wrong = Gradients::zeros_like(&other);
    assert!(opt.step(&mut net, &wrong, 0).is_err());
}

#[test]
fn lr_schedules_evaluate_as_documented() {
    let cosine = LrSchedule::Cosine { total_steps: 100 };
    assert_eq!(cosine.lr_at(2.0, 0), 2.0);
    assert!((cosine.lr_at(2.0, 50) - 1.0).abs() < 1e-12, "half-way cosine is half the base");
    assert!(cosine.lr_at(2.0, 100).abs() < 1e-12);
    assert_eq!(cosine.lr_at(2.0, 250), cosine.lr_at(2.0, 100), "past the end stays at the floor");

    let multi = LrSchedule::MultiStep { milestones: vec![10, 20], factor: 0.5 };
    assert_eq!(multi.lr_at(1.0, 9), 1.0);
    assert_eq!(multi.lr_at(1.0, 10), 0.5);
    assert_eq!(multi.lr_at(1.0, 20), 0.25);

    assert!(LrSchedule::Cosine { total_steps: 0 }.validate().is_err());
    assert!(LrSchedule::MultiStep { milestones: vec![5, 5], factor: 0.5 }.validate().is_err());
    assert!(LrSchedule::MultiStep { milestones: vec![5], factor: 0.0 }.validate().is_err());
}

#[test]
fn cosine_schedule_is_monotone_non_increasing() {
    let s = LrSchedule::Cosine { total_steps: 57 };
    let mut prev = f64::INFINITY;
    for step in 0..=57 {
        let lr = s.lr_at(1.0, step);
        assert!(lr <= prev + 1e-15, "cosine must not increase (step {step})");
        prev = lr;
    }
}

#[test]
fn fingerprint_distinguishes_parameter_changes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = DenseNet::new(3, &[4], 2, &mut rng).unwrap();
    let fp = net.param_fingerprint();
    assert_eq!(fp, net.clone().param_fingerprint(), "clone keeps the fingerprint");
    let touched = perturbed(&net, 0, 0, 0, 1e-12);
    assert_ne!(fp, touched.param_fingerprint(), "tiny edits must change the fingerprint");
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = DenseNet::new(4, &[5, 3], 2, &mut rng).unwrap();
    save_net(&net, &path).unwrap();
    let restored = load_net(&path).unwrap();
    assert_eq!(net.param_fingerprint(), restored.param_fingerprint(), "round-trip must be bit-exact");
    let x = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
    assert_eq!(net.forward_logits(&x).unwrap(), restored.forward_logits(&x).unwrap());
}

#[test]
fn checkpoint_rejects_malformed_files() {
    let dir = tempfile::tempdir().unwrap();

    // Weight count disagrees with the declared matrix shape.
    let bad_weights = dir.path().join("bad_weights.json");
    std::fs::write(
        &bad_weights,
        r#"{"version": 1, "input_dim": 2,
            "layers": [{"in_dim": 2, "out_dim": 1, "activation": "identity",
                        "weights": [1.0, 2.0, 3.0], "bias": [0.0]}]}"#,
    )
    .unwrap();
    assert!(matches!(load_net(&bad_weights), Err(Error::Shape(_))));

    // Unknown checkpoint version.
    let bad_version = dir.path().join("bad_version.json");
    std::fs::write(
        &bad_version,
        r#"{"version": 99, "input_dim": 1,
            "layers": [{"in_dim": 1, "out_dim": 1, "activation": "identity",
                        "weights": [1.0], "bias": [0.0]}]}"#,
    )
    .unwrap();
    assert!(matches!(load_net(&bad_version), Err(Error::Config(_))));
}

#[test]
fn from_layers_rejects_dimension_mismatch() {
    let hidden = Layer {
        weights: array![[1.0, 0.0]],
        bias: Array1::from_vec(vec![0.0]),
        activation: Activation::Relu,
    };
    let out = Layer {
        weights: array![[1.0, 1.0]], // expects 2 inputs, hidden provides 1
        bias: Array1::from_vec(vec![0.0]),
        activation: Activation::Identity,
    };
    assert!(matches!(DenseNet::from_layers(2, vec![hidden, out]), Err(Error::Shape(_))));
}

#[test]
fn relu_hidden_layers_identity_output_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = DenseNet::new(3, &[4, 5], 2, &mut rng).unwrap();
    let acts: Vec<Activation> = net.layers().iter().map(|l| l.activation).collect();
    assert_eq!(acts, vec![Activation::Relu, Activation::Relu, Activation::Identity]);
    assert_eq!(net.input_dim(), 3);
    assert_eq!(net.output_dim(), 2);
    // 3*4+4 + 4*5+5 + 5*2+2 = 16 + 25 + 12.
    assert_eq!(net.param_count(), 53);
}

#[test]
fn same_seed_same_init_different_seed_different_init() {
    let a = DenseNet::new(3, &[4], 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = DenseNet::new(3, &[4], 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let c = DenseNet::new(3, &[4], 2, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    assert_eq!(a.param_fingerprint(), b.param_fingerprint());
    assert_ne!(a.param_fingerprint(), c.param_fingerprint());
}
