use kgcn::data::{split, Interaction, InteractionDataset};
use kgcn::kg::{KnowledgeGraph, Triple};
use kgcn::eval::ctr_eval;
use kgcn::model::{Aggregator, ModelConfig, ModelSpec, Predictor};
use kgcn::numerics::{read_checkpoint, write_checkpoint};
use kgcn::synthetic::{generate, SyntheticConfig};
use kgcn::train::{build_sample, initial_params, sweep, train, train_and_evaluate, SweepParameter, TrainConfig};

fn toy(users: usize, items: usize, genres: usize, per_user: usize) -> (kgcn::data::SplitDataset, kgcn::kg::KnowledgeGraph) {
    let data = generate(&SyntheticConfig {
        users,
        items,
        genres,
        eras: 2,
        positives_per_user: per_user,
        seed: 3,
    })
    .unwrap();
    (split(&data.dataset, [6.0, 2.0, 2.0], 1).unwrap(), data.kg)
}

fn model(k: usize) -> ModelConfig {
    ModelConfig {
        dim: 8,
        depth: 1,
        sample_size: k,
        aggregator: Aggregator::Sum,
        uniform_weights: false,
    }
}

#[test]
fn zero_epochs_returns_initial_parameters() {
    let (parts, kg) = toy(10, 20, 4, 3);
    let sample = build_sample(&kg, parts.train.num_items, 2, 0).unwrap();
    let spec = ModelSpec::Kgcn(model(2));
    let cfg = TrainConfig {
        max_epochs: 0,
        seed: 9,
        ..Default::default()
    };
    let (params, report) = train(&parts, &sample, &spec, &cfg).unwrap();
    assert_eq!(params, initial_params(&parts, &sample, &spec, 9));
    assert!(report.epochs.is_empty());
    assert_eq!(report.best_epoch, None);
}

#[test]
fn loss_falls_on_a_separable_toy_problem() {
    // Users 0..3 like items 0..5, users 3..5 like items 5..10; the KG ties
    // each half to its own hub entity. 5 users x 10 items = 50 records.
    let mut records = Vec::new();
    for user in 0..5 {
        for item in 0..10 {
            records.push(Interaction {
                user,
                item,
                label: (user < 3) == (item < 5),
            });
        }
    }
    let dataset = InteractionDataset::new(records, 5, 10).unwrap();
    let kg = KnowledgeGraph::from_triples((0..10).map(|i| Triple::new(i, 0, 10 + i / 5)).collect());
    let parts = split(&dataset, [1.0, 0.0, 0.0], 0).unwrap();
    let sample = build_sample(&kg, 10, 2, 0).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.02,
        l2_weight: 0.0,
        batch_size: 10,
        max_epochs: 20,
        seed: 1,
        eval_every: 1,
    };
    for spec in [ModelSpec::Kgcn(model(2)), ModelSpec::MatrixFactorization { dim: 8 }] {
        let (_, report) = train(&parts, &sample, &spec, &cfg).unwrap();
        let first = report.epochs[0].train_loss;
        let last = report.epochs[19].train_loss;
        assert!(last < 0.5 * first, "{spec:?}: {first} -> {last}");
    }
}

#[test]
fn training_is_reproducible_and_thread_independent() {
    let (parts, kg) = toy(40, 80, 8, 4);
    let sample = build_sample(&kg, parts.train.num_items, 4, 2).unwrap();
    let spec = ModelSpec::Kgcn(ModelConfig {
        depth: 2,
        ..model(4)
    });
    let cfg = TrainConfig {
        learning_rate: 0.01,
        batch_size: 16,
        max_epochs: 3,
        seed: 5,
        ..Default::default()
    };
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (p1, r1) = single.install(|| train(&parts, &sample, &spec, &cfg)).unwrap();
    let (p2, r2) = single.install(|| train(&parts, &sample, &spec, &cfg)).unwrap();
    let (p3, r3) = train(&parts, &sample, &spec, &cfg).unwrap();
    assert_eq!(p1, p2);
    assert!(r1.same_trajectory(&r2));
    assert_eq!(p1, p3);
    assert!(r1.same_trajectory(&r3));
}

#[test]
fn best_epoch_has_highest_validation_auc() {
    let (parts, kg) = toy(40, 80, 8, 4);
    let sample = build_sample(&kg, parts.train.num_items, 2, 0).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        batch_size: 32,
        max_epochs: 6,
        seed: 2,
        ..Default::default()
    };
    let spec = ModelSpec::Kgcn(model(2));
    let (params, report) = train(&parts, &sample, &spec, &cfg).unwrap();
    let best = report
        .epochs
        .iter()
        .map(|e| e.val_auc.unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(report.best_val_auc(), Some(best));
    let predictor = Predictor::new(&spec, &params, &sample).unwrap();
    assert_eq!(ctr_eval(&predictor, &parts.validation).unwrap().auc, best);
    let csv = report.to_csv();
    assert!(csv.starts_with("epoch,train_loss,val_auc,val_f1,seconds\n"));
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn checkpoint_round_trip_preserves_validation_auc() {
    let (parts, kg) = toy(30, 60, 6, 4);
    let sample = build_sample(&kg, parts.train.num_items, 2, 0).unwrap();
    let spec = ModelSpec::Kgcn(ModelConfig {
        aggregator: Aggregator::Concat,
        ..model(2)
    });
    let cfg = TrainConfig {
        max_epochs: 2,
        learning_rate: 0.01,
        ..Default::default()
    };
    let (params, _) = train(&parts, &sample, &spec, &cfg).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &params, spec.architecture()).unwrap();
    let (loaded, arch) = read_checkpoint(bytes.as_slice()).unwrap();
    assert_eq!(arch, spec.architecture());
    let before = ctr_eval(&Predictor::new(&spec, &params, &sample).unwrap(), &parts.validation).unwrap();
    let after = ctr_eval(&Predictor::new(&spec, &loaded, &sample).unwrap(), &parts.validation).unwrap();
    assert!((before.auc - after.auc).abs() < 1e-12);
}

#[test]
fn single_point_sweep_equals_direct_training() {
    let (parts, kg) = toy(20, 40, 4, 3);
    let base = model(2);
    let cfg = TrainConfig {
        max_epochs: 2,
        learning_rate: 0.01,
        seed: 4,
        ..Default::default()
    };
    let rows = sweep(&parts, &kg, &base, &cfg, 7, SweepParameter::K, &[2]).unwrap();
    let sample = build_sample(&kg, parts.train.num_items, 2, 7).unwrap();
    let direct = train_and_evaluate(&parts, &sample, &ModelSpec::Kgcn(base), &cfg).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].test_auc, direct.test.auc);
    assert!(sweep(&parts, &kg, &base, &cfg, 7, SweepParameter::H, &[]).is_err());
}

#[test]
fn rejects_inconsistent_configuration() {
    let (parts, kg) = toy(10, 20, 4, 3);
    let sample = build_sample(&kg, parts.train.num_items, 2, 0).unwrap();
    let cfg = TrainConfig::default();
    let wrong_k = ModelSpec::Kgcn(model(4));
    assert!(train(&parts, &sample, &wrong_k, &cfg).is_err());
    let no_depth = ModelSpec::Kgcn(ModelConfig { depth: 0, ..model(2) });
    assert!(train(&parts, &sample, &no_depth, &cfg).is_err());
}
