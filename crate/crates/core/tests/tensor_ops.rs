use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xmodal_core::tensor::{
    cosine_similarity, euclidean_distance, finite_diff_grad, l2_normalize, max_relative_error,
    Tape, Tensor, Unary, Var,
};
use xmodal_core::Error;

const H: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Compares analytic and numeric gradients of `sum(op(inputs) * w)` for a
/// fixed random weighting `w`, returning the worst relative error.
fn op_gradient_error(inputs: &[Tensor], seed: u64, op: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut probe = Tape::new();
    let vs: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
    let probe_out = op(&mut probe, &vs);
    let out_shape = probe.value(probe_out).shape().to_vec();
    let w = random(
        &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
        &out_shape,
        -1.0,
        1.0,
    );

    let objective = |tape: &mut Tape, vs: &[Var]| {
        let out = op(tape, vs);
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv).unwrap();
        tape.sum(prod)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = objective(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for slot in 0..inputs.len() {
        let numeric = finite_diff_grad(
            |x| {
                let mut t = Tape::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, v)| t.constant(if i == slot { x.clone() } else { v.clone() }))
                    .collect();
                let l = objective(&mut t, &vs);
                t.scalar(l).unwrap()
            },
            &inputs[slot],
            H,
        );
        let (e, _) = max_relative_error(grads.wrt(vars[slot]).data(), numeric.data());
        worst = worst.max(e);
    }
    worst
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&mut rng, &[3, 4], -1.0, 1.0);
    let b = random(&mut rng, &[4, 2], -1.0, 1.0);
    let mut tape = Tape::new();
    let (va, vb) = (tape.param(a.clone()), tape.param(b.clone()));
    let c = tape.matmul(va, vb).unwrap();
    let s = tape.sum(c);
    let g = tape.backward(s).unwrap();
    let sum_of = |x: &Tensor, y: &Tensor| {
        let mut t = Tape::new();
        let (p, q) = (t.constant(x.clone()), t.constant(y.clone()));
        let m = t.matmul(p, q).unwrap();
        let s = t.sum(m);
        t.scalar(s).unwrap()
    };
    let na = finite_diff_grad(|x| sum_of(x, &b), &a, H);
    let nb = finite_diff_grad(|x| sum_of(&a, x), &b, H);
    assert!(max_relative_error(g.wrt(va).data(), na.data()).0 < 1e-6);
    assert!(max_relative_error(g.wrt(vb).data(), nb.data()).0 < 1e-6);
}

#[test]
fn matmul_matches_naive_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (m, k, n) = (5, 7, 3);
    let a = random(&mut rng, &[m, k], -3.0, 3.0);
    let b = random(&mut rng, &[k, n], -3.0, 3.0);
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let c = tape.matmul(va, vb).unwrap();
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.data()[i * k + p] * b.data()[p * n + j];
            }
            assert!((tape.value(c).data()[i * n + j] - s).abs() < 1e-12);
        }
    }
}

#[test]
fn shared_node_accumulates_both_paths() {
    let x = Tensor::vector(vec![0.3, -0.7, 1.1]).unwrap();
    let f = |t: &mut Tape, x: Var| {
        let sq = t.mul(x, x).unwrap();
        let th = t.tanh(x);
        let both = t.add(sq, th).unwrap();
        t.sum(both)
    };
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let l = f(&mut tape, v);
    let g = tape.backward(l).unwrap();
    let n = finite_diff_grad(
        |x| {
            let mut t = Tape::new();
            let v = t.constant(x.clone());
            let l = f(&mut t, v);
            t.scalar(l).unwrap()
        },
        &x,
        H,
    );
    assert!(max_relative_error(g.wrt(v).data(), n.data()).0 < 1e-8);
}

#[test]
fn cosine_closed_forms() {
    let u = [0.3, -1.2, 2.5];
    assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
    assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    assert!(matches!(
        cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
        Err(Error::Degenerate { .. })
    ));
}

#[test]
fn distance_closed_forms() {
    assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
    assert_eq!(euclidean_distance(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
    assert!(matches!(
        euclidean_distance(&[1.0], &[1.0, 2.0]),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn normalize_closed_forms() {
    let n = l2_normalize(&Tensor::vector(vec![3.0, 4.0]).unwrap());
    assert!(!n.degenerate);
    assert!((n.tensor.data()[0] - 0.6).abs() < 1e-15);
    assert!((n.tensor.data()[1] - 0.8).abs() < 1e-15);
    let unit = Tensor::vector(vec![0.0, 1.0, 0.0]).unwrap();
    assert_eq!(l2_normalize(&unit).tensor, unit);
    let zero = Tensor::vector(vec![0.0, 0.0]).unwrap();
    let z = l2_normalize(&zero);
    assert!(z.degenerate);
    assert_eq!(z.tensor, zero);
}

#[test]
fn tape_cosine_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let u = random(&mut rng, &[1, 6], -2.0, 2.0);
        let v = random(&mut rng, &[1, 6], -2.0, 2.0);
        let mut tape = Tape::new();
        let (a, b) = (tape.param(u.clone()), tape.param(v.clone()));
        let c = tape.cosine_similarity(a, b).unwrap();
        let g = tape.backward(c).unwrap();
        let n = finite_diff_grad(|x| cosine_similarity(x.data(), v.data()).unwrap(), &u, H);
        assert!(max_relative_error(g.wrt(a).data(), n.data()).0 < 1e-5);
    }
}

#[test]
fn normalize_then_dot_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&mut rng, &[1, 5], -2.0, 2.0);
    let w = random(&mut rng, &[5, 1], -1.0, 1.0);
    let f = |t: &mut Tape, x: Var| {
        let n = t.l2_normalize(x).unwrap();
        let wv = t.constant(w.clone());
        let d = t.matmul(n, wv).unwrap();
        t.sum(d)
    };
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let l = f(&mut tape, v);
    let g = tape.backward(l).unwrap();
    let n = finite_diff_grad(
        |x| {
            let mut t = Tape::new();
            let v = t.constant(x.clone());
            let l = f(&mut t, v);
            t.scalar(l).unwrap()
        },
        &x,
        H,
    );
    assert!(max_relative_error(g.wrt(v).data(), n.data()).0 < 1e-6);
}

#[test]
fn unary_domain_and_shape_errors() {
    let mut t = Tape::new();
    let neg = t.constant(Tensor::vector(vec![1.0, -1.0]).unwrap());
    assert!(matches!(t.log(neg), Err(Error::Domain { .. })));
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[2, 2]));
    assert!(matches!(t.add(a, b), Err(Error::Dimension { .. })));
    assert!(matches!(t.matmul(a, b), Err(Error::Dimension { .. })));
    assert!(matches!(t.backward(a), Err(Error::Contract(_))));
}

fn shape_and_seed() -> impl Strategy<Value = (usize, usize, u64)> {
    (2usize..5, 2usize..5, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn elementwise_ops_gradients((m, n, seed) in shape_and_seed()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[m, n], -2.0, 2.0);
        let b = random(&mut rng, &[m, n], -2.0, 2.0);
        let pos = random(&mut rng, &[m, n], 0.2, 3.0);
        let ab = [a.clone(), b.clone()];
        prop_assert!(op_gradient_error(&ab, seed, |t, v| t.add(v[0], v[1]).unwrap()) < 1e-5);
        prop_assert!(op_gradient_error(&ab, seed, |t, v| t.sub(v[0], v[1]).unwrap()) < 1e-5);
        prop_assert!(op_gradient_error(&ab, seed, |t, v| t.mul(v[0], v[1]).unwrap()) < 1e-5);
        let one = [a.clone()];
        prop_assert!(op_gradient_error(&one, seed, |t, v| t.scale(v[0], -1.7)) < 1e-5);
        prop_assert!(op_gradient_error(&one, seed, |t, v| t.div_scalar(v[0], 3.0)) < 1e-5);
        for kind in [Unary::Tanh, Unary::Softplus, Unary::Exp] {
            prop_assert!(op_gradient_error(&one, seed, |t, v| t.unary(kind, v[0]).unwrap()) < 1e-5);
        }
        prop_assert!(op_gradient_error(&[pos], seed, |t, v| t.log(v[0]).unwrap()) < 1e-5);
        // keep relu inputs away from the kink
        let away = a.map(|x| if x.abs() < 0.1 { x + 0.3 } else { x });
        prop_assert!(op_gradient_error(&[away], seed, |t, v| t.relu(v[0])) < 1e-5);
    }

    #[test]
    fn structural_ops_gradients((m, n, seed) in shape_and_seed()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[m, n], -2.0, 2.0);
        let b = random(&mut rng, &[n, m], -2.0, 2.0);
        let bias = random(&mut rng, &[1, n], -1.0, 1.0);
        let sq = random(&mut rng, &[m, m], -2.0, 2.0);
        prop_assert!(op_gradient_error(&[a.clone(), b], seed, |t, v| t.matmul(v[0], v[1]).unwrap()) < 1e-5);
        prop_assert!(op_gradient_error(&[a.clone(), bias], seed, |t, v| t.add_bias(v[0], v[1]).unwrap()) < 1e-5);
        let one = [a.clone()];
        prop_assert!(op_gradient_error(&one, seed, |t, v| t.transpose(v[0]).unwrap()) < 1e-5);
        prop_assert!(op_gradient_error(&one, seed, |t, v| t.normalize_rows(v[0]).unwrap()) < 1e-5);
        prop_assert!(op_gradient_error(&one, seed, |t, v| t.row_sum(v[0]).unwrap()) < 1e-5);
        prop_assert!(op_gradient_error(&one, seed, |t, v| t.mean(v[0])) < 1e-5);
        prop_assert!(op_gradient_error(&one, seed, |t, v| t.gather_rows(v[0], &[1, 0, 1]).unwrap()) < 1e-5);
        prop_assert!(op_gradient_error(&one, seed, |t, v| t.row_logsumexp(v[0], false).unwrap()) < 1e-5);
        let s = [sq];
        prop_assert!(op_gradient_error(&s, seed, |t, v| t.diag(v[0]).unwrap()) < 1e-5);
        prop_assert!(op_gradient_error(&s, seed, |t, v| t.row_logsumexp(v[0], true).unwrap()) < 1e-5);
        let c = random(&mut rng, &[m, n], -2.0, 2.0);
        prop_assert!(op_gradient_error(&[a, c], seed, |t, v| t.row_cosine(v[0], v[1]).unwrap()) < 1e-5);
    }

    #[test]
    fn softplus_gradient_on_random_vectors(xs in prop::collection::vec(-6.0f64..6.0, 1..12)) {
        let x = Tensor::vector(xs).unwrap();
        let mut t = Tape::new();
        let v = t.param(x.clone());
        let s = t.softplus(v);
        let l = t.sum(s);
        let g = t.backward(l).unwrap();
        for (gi, xi) in g.wrt(v).data().iter().zip(x.data()) {
            prop_assert!((gi - 1.0 / (1.0 + (-xi).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_is_idempotent(xs in prop::collection::vec(-1e3f64..1e3, 1..20)) {
        prop_assume!(xs.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-6);
        let once = l2_normalize(&Tensor::vector(xs).unwrap());
        let twice = l2_normalize(&once.tensor);
        prop_assert_eq!(&once.tensor, &twice.tensor);
        let norm = once.tensor.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_bounded_and_symmetric(
        u in prop::collection::vec(-1e3f64..1e3, 16),
        v in prop::collection::vec(-1e3f64..1e3, 16),
    ) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-6) && v.iter().any(|x| x.abs() > 1e-6));
        let c = cosine_similarity(&u, &v).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        prop_assert_eq!(c, cosine_similarity(&v, &u).unwrap());
    }

    #[test]
    fn distance_is_a_metric(
        u in prop::collection::vec(-10.0f64..10.0, 5),
        v in prop::collection::vec(-10.0f64..10.0, 5),
        w in prop::collection::vec(-10.0f64..10.0, 5),
    ) {
        let d = |a: &[f64], b: &[f64]| euclidean_distance(a, b).unwrap();
        prop_assert!(d(&u, &v) >= 0.0);
        prop_assert_eq!(d(&u, &v), d(&v, &u));
        prop_assert_eq!(d(&u, &u), 0.0);
        prop_assert!(d(&u, &w) <= d(&u, &v) + d(&v, &w) + 1e-12);
        if u != v {
            prop_assert!(d(&u, &v) > 0.0);
        }
    }
}

#[test]
fn softplus_slope_at_one() {
    let mut t = Tape::new();
    let v = t.param(Tensor::vector(vec![1.0]).unwrap());
    let s = t.softplus(v);
    let l = t.sum(s);
    let g = t.backward(l).unwrap();
    assert!((g.wrt(v).data()[0] - 0.7310585786300049).abs() < 1e-15);
}
