use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xmodal_core::model::{glorot_bound, Activation, ModelConfig, ModelParams};
use xmodal_core::tensor::{finite_diff_grad, max_relative_error, Tape, Tensor};
use xmodal_core::Error;

fn small() -> ModelConfig {
    ModelConfig {
        input_dims: vec![5, 3],
        hidden_dims: vec![4],
        feature_dim: 3,
        embedding_dim: 2,
        activation: Activation::Tanh,
        seed: 9,
    }
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(
        vec![r, c],
        (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn init_is_deterministic_in_seed() {
    let a = ModelParams::init(&ModelConfig::default()).unwrap();
    let b = ModelParams::init(&ModelConfig::default()).unwrap();
    assert_eq!(a, b);
    let c = ModelParams::init(&ModelConfig {
        seed: 1,
        ..ModelConfig::default()
    })
    .unwrap();
    assert_ne!(a, c);
}

#[test]
fn glorot_range_and_zero_biases() {
    assert!((glorot_bound(64, 128) - 0.1768).abs() < 1e-4);
    let p = ModelParams::init(&ModelConfig::default()).unwrap();
    for (name, t) in p.named_tensors() {
        if name.ends_with("bias") {
            assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
        } else {
            let s = glorot_bound(t.shape()[0], t.shape()[1]);
            assert!(t.data().iter().all(|x| x.abs() <= s), "{name}");
        }
    }
    let enc = p.encoder();
    assert_eq!(enc.weight.shape(), &[64, 128]);
    assert!(enc.weight.data().iter().all(|x| x.abs() <= 0.1768 + 1e-4));
}

#[test]
fn zero_weights_give_zero_features() {
    let cfg = ModelConfig {
        activation: Activation::Relu,
        ..small()
    };
    let p = ModelParams::init(&cfg).unwrap();
    let zeros = p
        .tensors()
        .iter()
        .map(|t| Tensor::zeros(t.shape()))
        .collect();
    let z = p.with_tensors(zeros).unwrap();
    let x = random(&mut ChaCha8Rng::seed_from_u64(1), 4, 5);
    let y = z.forward_backbone(0, &x).unwrap();
    assert_eq!(y.shape(), &[4, 3]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn rows_are_independent_of_batch() {
    let p = ModelParams::init(&small()).unwrap();
    let x = random(&mut ChaCha8Rng::seed_from_u64(2), 6, 5);
    let all = p.embed(0, &x).unwrap();
    for i in 0..6 {
        let one = Tensor::new(vec![1, 5], x.row(i).to_vec()).unwrap();
        assert_eq!(p.embed(0, &one).unwrap().row(0), all.row(i));
    }
}

#[test]
fn encoder_is_shared_and_backbones_are_separate() {
    let p = ModelParams::init(&small()).unwrap();
    let y = random(&mut ChaCha8Rng::seed_from_u64(3), 2, 3);
    let z = p.forward_encoder(&y).unwrap();
    // identical features from either modality map to identical embeddings
    let x1 = random(&mut ChaCha8Rng::seed_from_u64(4), 2, 3);
    let y1 = p.forward_backbone(1, &x1).unwrap();
    assert_eq!(p.embed(1, &x1).unwrap(), p.forward_encoder(&y1).unwrap());
    assert_eq!(z, p.forward_encoder(&y).unwrap());

    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, true);
    let x0 = tape.constant(random(&mut ChaCha8Rng::seed_from_u64(5), 2, 5));
    let y0 = bound.backbone(&mut tape, 0, x0).unwrap();
    let z0 = bound.encoder(&mut tape, y0).unwrap();
    let l = tape.sum(z0);
    let g = tape.backward(l).unwrap();
    for v in bound.backbone_vars(1) {
        assert!(g.wrt(v).data().iter().all(|&x| x == 0.0));
    }
    assert!(bound
        .backbone_vars(0)
        .iter()
        .any(|&v| g.wrt(v).data().iter().any(|&x| x != 0.0)));
}

#[test]
fn wrong_input_width_is_a_dimension_error() {
    let p = ModelParams::init(&small()).unwrap();
    assert!(matches!(
        p.forward_backbone(0, &Tensor::zeros(&[2, 3])),
        Err(Error::Dimension { .. })
    ));
    assert!(matches!(
        p.forward_encoder(&Tensor::zeros(&[2, 4])),
        Err(Error::Dimension { .. })
    ));
    assert!(matches!(
        p.forward_backbone(2, &Tensor::zeros(&[2, 5])),
        Err(Error::Index(_))
    ));
}

#[test]
fn first_layer_gradient_matches_finite_differences() {
    let p = ModelParams::init(&small()).unwrap();
    let x = random(&mut ChaCha8Rng::seed_from_u64(6), 3, 5);
    let w = random(&mut ChaCha8Rng::seed_from_u64(7), 3, 2);
    let objective = |tape: &mut Tape, params: &ModelParams, grad: bool| {
        let b = params.bind(tape, grad);
        let xv = tape.constant(x.clone());
        let y = b.backbone(tape, 0, xv).unwrap();
        let z = b.encoder(tape, y).unwrap();
        let wv = tape.constant(w.clone());
        let m = tape.mul(z, wv).unwrap();
        (tape.sum(m), b)
    };
    let mut tape = Tape::new();
    let (l, b) = objective(&mut tape, &p, true);
    let g = tape.backward(l).unwrap();
    let first = p.tensors()[0].clone();
    let numeric = finite_diff_grad(
        |t| {
            let mut ts: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
            ts[0] = t.clone();
            let q = p.with_tensors(ts).unwrap();
            let mut tape = Tape::new();
            let (l, _) = objective(&mut tape, &q, false);
            tape.scalar(l).unwrap()
        },
        &first,
        1e-5,
    );
    let analytic = g.wrt(b.vars()[0]);
    assert!(max_relative_error(analytic.data(), numeric.data()).0 < 1e-5);
}

#[test]
fn hand_computed_two_dim_model() {
    let cfg = ModelConfig {
        input_dims: vec![2, 2],
        hidden_dims: vec![],
        feature_dim: 2,
        embedding_dim: 2,
        activation: Activation::Tanh,
        seed: 0,
    };
    let p = ModelParams::init(&cfg).unwrap();
    let t = |r, c, d: &[f64]| Tensor::new(vec![r, c], d.to_vec()).unwrap();
    let tensors = vec![
        t(2, 2, &[1.0, 2.0, 3.0, 4.0]),
        t(1, 2, &[0.5, -0.5]),
        t(2, 2, &[1.0, 0.0, 0.0, 1.0]),
        t(1, 2, &[0.0, 0.0]),
        t(2, 2, &[0.0, 1.0, -1.0, 0.0]),
        t(1, 2, &[1.0, 1.0]),
    ];
    let q = p.with_tensors(tensors).unwrap();
    let x = t(1, 2, &[1.0, 1.0]);
    // y = [1+3+0.5, 2+4-0.5] = [4.5, 5.5]; z = [-5.5+1, 4.5+1]
    assert_eq!(q.forward_backbone(0, &x).unwrap().data(), &[4.5, 5.5]);
    assert_eq!(q.embed(0, &x).unwrap().data(), &[-4.5, 5.5]);
    assert_eq!(q.embed(1, &x).unwrap().data(), &[0.0, 2.0]);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = ModelConfig {
        input_dims: vec![5],
        ..small()
    };
    assert!(matches!(ModelParams::init(&bad), Err(Error::Config { .. })));
    let bad = ModelConfig {
        feature_dim: 0,
        ..small()
    };
    assert!(matches!(ModelParams::init(&bad), Err(Error::Config { .. })));
    let p = ModelParams::init(&small()).unwrap();
    assert!(p.with_tensors(vec![Tensor::zeros(&[1, 1])]).is_err());
}
