use super::*;
use crate::config::{ArchConfig, Variant};

fn small_spec() -> ToySpec {
    ToySpec {
        train_per_class: 4,
        test_per_class: 2,
        points: 32,
        ..ToySpec::default()
    }
}

fn small_model(seed: u64) -> Model {
    let cfg = ArchConfig {
        channels: vec![4, 6, 8],
        neighbors: 6,
        head: vec![16],
        num_classes: 4,
        ..ArchConfig::defaults(Variant::Cls3)
    };
    Model::build(&cfg, seed).unwrap()
}

fn small_train() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn toy_dataset_layout() {
    let s = toy_dataset(&small_spec()).unwrap();
    assert_eq!(s.train.len(), 16);
    assert_eq!(s.test.len(), 8);
    assert_eq!(s.train[0].class_label, Some(0));
    assert_eq!(s.train[5].class_label, Some(1));
    assert!(s.train.iter().all(|c| c.normals.is_some() && c.len() == 32));
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let s = toy_dataset(&small_spec()).unwrap();
    let mut m = small_model(1);
    let before = m.params.values().to_vec();
    let cfg = TrainConfig {
        epochs: 1,
        lr: 0.0,
        ..small_train()
    };
    train(&mut m, &s.train, None, &cfg).unwrap();
    assert_eq!(m.params.values(), before.as_slice());
}

#[test]
fn same_seed_same_log() {
    let s = toy_dataset(&small_spec()).unwrap();
    let run = || {
        let mut m = small_model(2);
        train(&mut m, &s.train, Some(&s.test), &small_train())
            .unwrap()
            .log
            .to_csv()
    };
    assert_eq!(run(), run());
}

#[test]
fn eval_is_repeatable() {
    let s = toy_dataset(&small_spec()).unwrap();
    let mut m = small_model(3);
    train(&mut m, &s.train, None, &small_train()).unwrap();
    let a = evaluate_classification(&mut m, &s.test).unwrap();
    let b = evaluate_classification(&mut m, &s.test).unwrap();
    assert_eq!(a, b);
    assert!((0.0..=1.0).contains(&a));
}

#[test]
fn eval_only_full_size_matches_plain_eval() {
    let s = toy_dataset(&small_spec()).unwrap();
    let mut m = small_model(4);
    let full = evaluate_classification(&mut m, &s.test).unwrap();
    let sweep = robustness_sweep(
        &mut m,
        &s.train,
        &s.test,
        &[32],
        RobustProtocol::EvalOnly,
        &small_train(),
    )
    .unwrap();
    assert_eq!(sweep[0].accuracy, full);
    assert!(robustness_sweep(
        &mut m,
        &s.train,
        &s.test,
        &[33],
        RobustProtocol::EvalOnly,
        &small_train()
    )
    .is_err());
}

#[test]
fn tiny_step_does_not_increase_loss() {
    let s = toy_dataset(&small_spec()).unwrap();
    let mut m = small_model(5);
    m.cfg.dropout = 0.0;
    let batch = m.make_batch(&s.train[..8]).unwrap();
    let train_loss = |m: &mut Model| {
        let mut t = Tape::new();
        let mut rng = SeedStream::new(0).rng();
        let mut bn = m.bn.clone();
        std::mem::swap(&mut bn, &mut m.bn);
        let f = m.forward(&mut t, &batch, true, &mut rng).unwrap();
        let l = m.loss(&mut t, &f, &batch).unwrap();
        m.bn = bn;
        t.value(l).data()[0]
    };
    let before = train_loss(&mut m);
    let mut adam = Adam::new(1e-6);
    step(&mut m, &mut adam, &batch, SeedStream::new(0)).unwrap();
    let after = train_loss(&mut m);
    assert!(after - before < 1e-8, "{before} -> {after}");
}

#[test]
fn empty_training_set_is_rejected() {
    let mut m = small_model(6);
    assert!(train(&mut m, &[], None, &small_train()).is_err());
}
