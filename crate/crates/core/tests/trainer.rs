use xmodal_core::data::{generate_synthetic, split, SplitConfig, SynthConfig, TupleDataset};
use xmodal_core::losses::schedule_weight;
use xmodal_core::model::{ModelConfig, ModelParams};
use xmodal_core::tensor::Tensor;
use xmodal_core::trainer::{
    adam_step, load_checkpoint, save_checkpoint, train, train_from, AdamConfig, AdamState,
    Checkpoint, TrainConfig, TrainState,
};

fn data() -> (TupleDataset, TupleDataset) {
    let ds = generate_synthetic(&SynthConfig {
        num_tuples: 120,
        num_classes: 4,
        input_dims: vec![8, 6],
        seed: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let (tr, va, _) = split(&ds, &SplitConfig::default()).unwrap();
    (tr, va)
}

fn model_cfg() -> ModelConfig {
    ModelConfig {
        input_dims: vec![8, 6],
        hidden_dims: vec![12],
        feature_dim: 10,
        embedding_dim: 8,
        seed: 5,
        ..ModelConfig::default()
    }
}

fn train_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        adam: AdamConfig {
            learning_rate: 1e-2,
            ..AdamConfig::default()
        },
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
#[allow(clippy::needless_range_loop)]
fn adam_matches_reference_on_quadratic() {
    let target = [1.0, -2.0, 0.5];
    let cfg = AdamConfig {
        learning_rate: 0.1,
        ..AdamConfig::default()
    };
    let mut theta = Tensor::vector(vec![0.0, 0.0, 0.0]).unwrap();
    let mut state = AdamState::zeros_like(&[&theta]);

    let mut r_theta = [0.0f64; 3];
    let mut m = [0.0f64; 3];
    let mut v = [0.0f64; 3];
    for step in 1..=10 {
        let g: Vec<f64> = theta
            .data()
            .iter()
            .zip(&target)
            .map(|(x, c)| 2.0 * (x - c))
            .collect();
        theta = adam_step(&[&theta], &[&Tensor::vector(g).unwrap()], &mut state, &cfg)
            .unwrap()
            .remove(0);
        for i in 0..3 {
            let g = 2.0 * (r_theta[i] - target[i]);
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.999 * v[i] + 0.001 * g * g;
            let mh = m[i] / (1.0 - 0.9f64.powi(step));
            let vh = v[i] / (1.0 - 0.999f64.powi(step));
            r_theta[i] -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        for i in 0..3 {
            assert!((theta.data()[i] - r_theta[i]).abs() < 1e-12, "step {step}");
        }
    }
    assert_eq!(state.step, 10);
}

#[test]
fn training_is_deterministic() {
    let (tr, va) = data();
    let (p1, r1) = train(&tr, Some(&va), &model_cfg(), &train_cfg(4)).unwrap();
    let (p2, r2) = train(&tr, Some(&va), &model_cfg(), &train_cfg(4)).unwrap();
    assert_eq!(p1, p2);
    assert!(r1.same_losses(&r2));
    assert_eq!(r1.to_csv(false), r2.to_csv(false));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (tr, va) = data();
    let cfg = train_cfg(10);
    let fresh = || TrainState::fresh(ModelParams::init(&model_cfg()).unwrap());

    let full = train_from(fresh(), &tr, Some(&va), &cfg, |_| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let result = train_from(fresh(), &tr, Some(&va), &cfg, |s| {
        if s.epoch == 5 {
            save_checkpoint(
                &Checkpoint {
                    train_config: cfg.clone(),
                    state: s.clone(),
                },
                &path,
            )?;
            return Err(xmodal_core::Error::Contract("stop after epoch 5".into()));
        }
        Ok(())
    });
    assert!(result.is_err());

    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.state.epoch, 5);
    assert_eq!(ck.train_config, cfg);
    let resumed = train_from(ck.state, &tr, Some(&va), &ck.train_config, |_| Ok(())).unwrap();
    assert_eq!(resumed.params, full.params);
    assert_eq!(resumed.adam, full.adam);
    assert!(resumed.history.same_losses(&full.history));
}

#[test]
fn epoch_losses_follow_schedule_and_add_up() {
    let (tr, va) = data();
    let (_, report) = train(&tr, Some(&va), &model_cfg(), &train_cfg(6)).unwrap();
    assert_eq!(report.epochs.len(), 6);
    for (e, r) in report.epochs.iter().enumerate() {
        assert_eq!(r.epoch, e);
        let w = schedule_weight(e, 6, 1e-4).unwrap();
        assert_eq!(r.train.alpha, w);
        assert_eq!(r.train.beta, w);
        let sum = r.train.mim + r.train.alpha * r.train.mde + r.train.beta * r.train.msp;
        assert!((r.train.total - sum).abs() < 1e-12);
        assert!(r.val_total.unwrap().is_finite());
    }
    assert!(report.epochs[5].train.mim < report.epochs[0].train.mim);
}

#[test]
fn mim_only_ignores_regularizers() {
    let (tr, _) = data();
    let cfg = TrainConfig {
        mim_only: true,
        ..train_cfg(3)
    };
    let (_, report) = train(&tr, None, &model_cfg(), &cfg).unwrap();
    for r in &report.epochs {
        assert_eq!((r.train.alpha, r.train.beta), (0.0, 0.0));
        assert_eq!(r.train.total, r.train.mim);
        assert!(r.val_total.is_none());
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (tr, _) = data();
    let cfg = TrainConfig {
        adam: AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        },
        ..train_cfg(2)
    };
    let (p, _) = train(&tr, None, &model_cfg(), &cfg).unwrap();
    assert_eq!(p, ModelParams::init(&model_cfg()).unwrap());
}

#[test]
fn trained_pairs_are_closer_than_cross_pairs() {
    let (tr, va) = data();
    let (p, _) = train(&tr, Some(&va), &model_cfg(), &train_cfg(10)).unwrap();
    let z0 = p.embed(0, &va.full_matrix(0).unwrap()).unwrap();
    let z1 = p.embed(1, &va.full_matrix(1).unwrap()).unwrap();
    let n = va.len();
    let cos =
        |i: usize, k: usize| xmodal_core::tensor::cosine_similarity(z0.row(i), z1.row(k)).unwrap();
    let paired = (0..n).map(|i| cos(i, i)).sum::<f64>() / n as f64;
    let cross = (0..n)
        .flat_map(|i| (0..n).map(move |k| (i, k)))
        .map(|(i, k)| cos(i, k))
        .sum::<f64>()
        / (n * n) as f64;
    assert!(paired > cross, "{paired} vs {cross}");
}
