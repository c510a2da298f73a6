//! Double-head model: head wiring, the scaling factor on the calibration
//! path, gradient isolation, and persistence.

use adh_core::doublehead::{DoubleHeadModel, Head};
use adh_core::losses::{batch_loss_and_grad, softmax, LossKind};
use adh_core::nn::{Activation, DenseNet, Layer};
use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sample_inputs(n: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, dim), |(i, j)| ((i * dim + j) as f64 * 0.61).cos() * 2.0)
}

/// A model whose calibration head has non-trivial weights (the stock
/// constructor starts it at the uniform output).
fn randomized_model() -> DoubleHeadModel {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let main = DenseNet::new(4, &[6], 3, &mut rng).unwrap();
    let calib = DenseNet::new(3, &[2], 3, &mut rng).unwrap();
    DoubleHeadModel::from_parts(main, calib).unwrap()
}

#[test]
fn calibration_head_opens_at_the_uniform_distribution() {
    // The constructor zeroes the calibration head's output layer, so before
    // any training the head emits all-zero logits: exactly uniform
    // confidence regardless of the input.
    let model = DoubleHeadModel::new(5, &[8, 8], 4, 123).unwrap();
    let x = sample_inputs(6, 5);
    let z = model.calib_logits(&x, 1.0, true).unwrap();
    assert!(z.iter().all(|&v| v == 0.0), "untrained calibration logits must be exactly zero");
    // While the main head is already non-degenerate.
    let zm = model.main_logits(&x).unwrap();
    assert!(zm.iter().any(|&v| v != 0.0));
}

#[test]
fn calibration_head_is_a_single_hidden_bottleneck() {
    for n_classes in [2usize, 3, 5, 10] {
        let model = DoubleHeadModel::new(4, &[8], n_classes, 1).unwrap();
        let layers = model.calib.layers();
        assert_eq!(layers.len(), 2, "exactly one hidden layer");
        assert_eq!(layers[0].in_dim(), n_classes);
        assert_eq!(layers[0].out_dim(), n_classes.div_ceil(2), "hidden width is ceil(n/2)");
        assert_eq!(layers[0].activation, Activation::Relu);
        assert_eq!(layers[1].out_dim(), n_classes);
        assert_eq!(layers[1].activation, Activation::Identity);
    }
}

#[test]
fn scaling_factor_multiplies_the_main_logits() {
    // calib_logits(x, beta) must equal the calibration net applied to
    // beta * main_logits(x).
    let model = randomized_model();
    let x = sample_inputs(5, 4);
    for beta in [0.25, 1.0, 1.7] {
        let direct = model.calib_logits(&x, beta, true).unwrap();
        let scaled_inputs = model.main_logits(&x).unwrap() * beta;
        let expected = model.calib.forward_logits(&scaled_inputs).unwrap();
        assert_eq!(direct, expected, "beta {beta}");
    }
}

#[test]
fn head_logits_selects_the_head() {
    let model = randomized_model();
    let x = sample_inputs(3, 4);
    assert_eq!(model.head_logits(Head::Main, &x).unwrap(), model.main_logits(&x).unwrap());
    assert_eq!(
        model.head_logits(Head::Calib, &x).unwrap(),
        model.calib_logits(&x, 1.0, true).unwrap()
    );
}

#[test]
fn gradient_isolation_drops_the_main_gradient() {
    let model = randomized_model();
    let x = sample_inputs(4, 4);
    let (z, fwd) = model.calib_forward(&x, 1.3, true).unwrap();
    let (_, d_logits) = batch_loss_and_grad(LossKind::CrossEntropy, &z, &[0, 1, 2, 0]).unwrap();
    let grads = model.calib_backward(&fwd, &d_logits).unwrap();
    assert!(grads.main.is_none(), "stop_main_grad must suppress the main-head gradient");
    assert_eq!(grads.calib.layers.len(), model.calib.layers().len());
    assert!(grads.calib.is_finite());
}

#[test]
fn joint_gradient_matches_central_differences_through_the_scaling() {
    // With isolation off, the returned main-head gradient must be the exact
    // derivative of the composite loss CE(calib(beta * main(x))) — including
    // the beta factor on the chain.
    let model = randomized_model();
    let x = sample_inputs(3, 4);
    let labels = vec![2usize, 0, 1];
    let beta = 1.6;

    let (z, fwd) = model.calib_forward(&x, beta, false).unwrap();
    let (_, d_logits) = batch_loss_and_grad(LossKind::CrossEntropy, &z, &labels).unwrap();
    let grads = model.calib_backward(&fwd, &d_logits).unwrap();
    let main_grads = grads.main.expect("main gradient requested");

    let loss_at = |m: &DoubleHeadModel| {
        let z = m.calib_logits(&x, beta, true).unwrap();
        batch_loss_and_grad(LossKind::CrossEntropy, &z, &labels).unwrap().0
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for l in 0..model.main.layers().len() {
        let rows = model.main.layers()[l].weights.nrows();
        let cols = model.main.layers()[l].weights.ncols();
        for r in 0..rows {
            for c in 0..cols {
                let perturb = |delta: f64| {
                    let mut layers: Vec<Layer> = model.main.layers().to_vec();
                    layers[l].weights[[r, c]] += delta;
                    let main = DenseNet::from_layers(model.input_dim(), layers).unwrap();
                    DoubleHeadModel::from_parts(main, model.calib.clone()).unwrap()
                };
                let numeric = (loss_at(&perturb(h)) - loss_at(&perturb(-h))) / (2.0 * h);
                let analytic = main_grads.layers[l].d_weights[[r, c]];
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max((analytic - numeric).abs() / denom);
            }
        }
    }
    assert!(worst < 1e-5, "worst relative error of the chained main gradient: {worst}");
}

#[test]
fn calibration_gradient_matches_central_differences() {
    let model = randomized_model();
    let x = sample_inputs(3, 4);
    let labels = vec![1usize, 2, 0];

    // Central differences are only trustworthy away from the hidden ReLU's
    // kink, so pick the candidate scaling whose smallest pre-activation
    // magnitude is largest and insist on a wide margin over the step size.
    let kink_margin = |beta: f64| {
        let scaled = model.main_logits(&x).unwrap() * beta;
        let hidden = &model.calib.layers()[0];
        let pre = scaled.dot(&hidden.weights.t()) + &hidden.bias;
        pre.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    };
    let beta = [0.8, 1.1, 1.4, 1.9, 2.6]
        .into_iter()
        .max_by(|a, b| kink_margin(*a).total_cmp(&kink_margin(*b)))
        .unwrap();
    let margin = kink_margin(beta);
    assert!(margin > 1e-3, "fixture must stay clear of activation kinks, margin {margin}");

    let (z, fwd) = model.calib_forward(&x, beta, true).unwrap();
    let (_, d_logits) = batch_loss_and_grad(LossKind::CrossEntropy, &z, &labels).unwrap();
    let grads = model.calib_backward(&fwd, &d_logits).unwrap();

    let loss_with_calib = |calib: DenseNet| {
        let m = DoubleHeadModel::from_parts(model.main.clone(), calib).unwrap();
        let z = m.calib_logits(&x, beta, true).unwrap();
        batch_loss_and_grad(LossKind::CrossEntropy, &z, &labels).unwrap().0
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for l in 0..model.calib.layers().len() {
        let rows = model.calib.layers()[l].weights.nrows();
        let cols = model.calib.layers()[l].weights.ncols();
        for r in 0..rows {
            for c in 0..cols {
                let perturb = |delta: f64| {
                    let mut layers: Vec<Layer> = model.calib.layers().to_vec();
                    layers[l].weights[[r, c]] += delta;
                    DenseNet::from_layers(model.n_classes(), layers).unwrap()
                };
                let numeric =
                    (loss_with_calib(perturb(h)) - loss_with_calib(perturb(-h))) / (2.0 * h);
                let analytic = grads.calib.layers[l].d_weights[[r, c]];
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max((analytic - numeric).abs() / denom);
            }
        }
    }
    assert!(worst < 1e-5, "worst relative error of the calibration gradient: {worst}");
}

#[test]
fn save_load_roundtrip_preserves_both_heads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let model = randomized_model();
    model.save(&path).unwrap();
    let restored = DoubleHeadModel::load(&path).unwrap();
    let x = sample_inputs(4, 4);
    assert_eq!(restored.main_logits(&x).unwrap(), model.main_logits(&x).unwrap());
    assert_eq!(
        restored.calib_logits(&x, 1.2, true).unwrap(),
        model.calib_logits(&x, 1.2, true).unwrap()
    );
    assert_eq!(restored.n_classes(), model.n_classes());
    assert_eq!(restored.input_dim(), model.input_dim());
}

#[test]
fn from_parts_rejects_incompatible_heads() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // Calibration head whose input dimension is not the class count.
    let main = DenseNet::new(4, &[6], 3, &mut rng).unwrap();
    let wrong_in = DenseNet::new(4, &[2], 3, &mut rng).unwrap();
    assert!(DoubleHeadModel::from_parts(main.clone(), wrong_in).is_err());
    // Calibration head whose output dimension is not the class count.
    let wrong_out = DenseNet::new(3, &[2], 2, &mut rng).unwrap();
    assert!(DoubleHeadModel::from_parts(main, wrong_out).is_err());
}

#[test]
fn uniform_calibration_output_is_exactly_uniform_probability() {
    let model = DoubleHeadModel::new(3, &[4], 4, 9).unwrap();
    let x = sample_inputs(2, 3);
    let z = model.calib_logits(&x, 1.0, true).unwrap();
    let p = softmax(&z.row(0).to_vec());
    for &v in &p {
        assert!((v - 0.25).abs() < 1e-15);
    }
}

#[test]
fn model_seed_controls_both_heads_deterministically() {
    let a = DoubleHeadModel::new(4, &[6], 3, 5).unwrap();
    let b = DoubleHeadModel::new(4, &[6], 3, 5).unwrap();
    let c = DoubleHeadModel::new(4, &[6], 3, 6).unwrap();
    assert_eq!(a.main.param_fingerprint(), b.main.param_fingerprint());
    assert_eq!(a.calib.param_fingerprint(), b.calib.param_fingerprint());
    assert_ne!(a.main.param_fingerprint(), c.main.param_fingerprint());
}

#[test]
fn scaling_factor_must_be_finite_and_positive() {
    // beta = 0 would erase the main signal entirely and negative or
    // non-finite factors are meaningless, so all are rejected up front.
    let model = randomized_model();
    let x = sample_inputs(2, 4);
    for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
        assert!(model.calib_logits(&x, bad, true).is_err(), "beta {bad}");
        assert!(model.calib_forward(&x, bad, true).is_err(), "beta {bad}");
    }
}

#[test]
fn rejects_input_dimension_mismatch() {
    let model = randomized_model();
    let bad = array![[1.0, 2.0]];
    assert!(model.main_logits(&bad).is_err());
    assert!(model.calib_logits(&bad, 1.0, true).is_err());
}

#[test]
fn constructor_validates_architecture() {
    assert!(DoubleHeadModel::new(0, &[4], 3, 0).is_err());
    assert!(DoubleHeadModel::new(4, &[4], 1, 0).is_err());
}
