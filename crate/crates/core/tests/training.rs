use proptest::prelude::*;
use specxplain::model::{
    evaluate, fit, load_checkpoint, save_checkpoint, AdamState, Architecture, EarlyStopping,
    Sample, StopDecision, TrainConfig, TrainingMetadata,
};
use specxplain::{Mode, Rng, Tensor};

fn noisy_level(level: f64, rng: &mut Rng) -> Tensor {
    let data = (0..8 * 10 * 3)
        .map(|_| (level + rng.uniform_range(-0.1, 0.1)).clamp(0.0, 1.0))
        .collect();
    Tensor::new(&[8, 10, 3], data).unwrap()
}

/// Label = 1 when the mean pixel exceeds 0.5.
fn brightness_set(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = Rng::seeded(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let level = if label == 1 {
                rng.uniform_range(0.6, 0.9)
            } else {
                rng.uniform_range(0.1, 0.4)
            };
            Sample {
                input: noisy_level(level, &mut rng),
                label,
            }
        })
        .collect()
}

#[test]
fn frozen_validation_accuracy_stops_after_patience() {
    check_frozen_validation_accuracy_stops_after_patience();
}

/// The validation set holds one image twice with opposite labels, so its
/// accuracy is exactly 0.5 whatever the weights.
pub fn check_frozen_validation_accuracy_stops_after_patience() {
    let train = brightness_set(16, 1);
    let mut rng = Rng::seeded(2);
    let x = noisy_level(0.5, &mut rng);
    let val = vec![
        Sample {
            input: x.clone(),
            label: 0,
        },
        Sample { input: x, label: 1 },
    ];
    let mut model = Architecture::for_input(8, 10, 0.2)
        .build(&mut Rng::seeded(3))
        .unwrap();
    let config = TrainConfig {
        epochs: 20,
        batch_size: 4,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let history = fit(&mut model, &train, &val, &config).unwrap();

    assert_eq!(history.epochs.len(), 6);
    assert!(history.stopped_early);
    assert!(history.epochs.iter().all(|e| e.val_acc == 0.5));
    let losses: Vec<f64> = history.epochs.iter().map(|e| e.val_loss).collect();
    let best = (0..6)
        .min_by(|&a, &b| losses[a].total_cmp(&losses[b]))
        .unwrap();
    assert_eq!(history.best_epoch, best + 1);
    assert_eq!(evaluate(&model, &val).unwrap().loss, losses[best]);
}

#[test]
fn separable_set_is_learned_within_five_epochs() {
    let train = brightness_set(128, 4);
    let mut model = Architecture::for_input(8, 10, 0.2)
        .build(&mut Rng::seeded(5))
        .unwrap();
    let config = TrainConfig {
        epochs: 5,
        batch_size: 8,
        learning_rate: 0.001,
        ..TrainConfig::default()
    };
    let history = fit(&mut model, &train, &train, &config).unwrap();
    assert_eq!(
        history
            .epochs
            .iter()
            .map(|e| e.train_acc)
            .fold(0.0, f64::max),
        1.0
    );
    assert_eq!(evaluate(&model, &train).unwrap().accuracy, 1.0);
}

#[test]
fn training_is_seed_and_thread_deterministic() {
    let train = brightness_set(24, 6);
    let val = brightness_set(8, 7);
    let config = TrainConfig {
        epochs: 3,
        batch_size: 8,
        early_stop_patience: 3,
        seed: 11,
        ..TrainConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let mut model = Architecture::for_input(8, 10, 0.2)
                .build(&mut Rng::seeded(8))
                .unwrap();
            let history = fit(&mut model, &train, &val, &config).unwrap();
            let mut csv = Vec::new();
            history.write_csv(&mut csv).unwrap();
            (csv, model)
        })
    };
    let (csv1, m1) = run(1);
    let (csv3, m3) = run(3);
    assert_eq!(csv1, csv3);
    assert_eq!(m1, m3);

    let other = TrainConfig { seed: 12, ..config };
    let mut model = Architecture::for_input(8, 10, 0.2)
        .build(&mut Rng::seeded(8))
        .unwrap();
    fit(&mut model, &train, &val, &other).unwrap();
    assert_ne!(model, m1);
}

#[test]
fn trained_checkpoint_reloads_identically() {
    let train = brightness_set(16, 9);
    let mut model = Architecture::for_input(8, 10, 0.2)
        .build(&mut Rng::seeded(10))
        .unwrap();
    let config = TrainConfig {
        epochs: 2,
        batch_size: 8,
        early_stop_patience: 2,
        ..TrainConfig::default()
    };
    let history = fit(&mut model, &train, &train, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let meta = TrainingMetadata {
        epoch: Some(history.best_epoch),
        ..Default::default()
    };
    save_checkpoint(&model, &meta, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.metadata, meta);
    for s in &train {
        assert_eq!(
            back.model.predict_proba(&s.input).unwrap(),
            model.predict_proba(&s.input).unwrap()
        );
    }
}

#[test]
fn small_adam_step_lowers_single_sample_loss() {
    let model = Architecture::for_input(8, 10, 0.2)
        .build(&mut Rng::seeded(13))
        .unwrap();
    let mut rng = Rng::seeded(14);
    for i in 0..20 {
        let x = noisy_level(rng.uniform(), &mut rng);
        let label = i % 2;
        let (before, grads) = model.loss_and_grads(&x, label, Mode::Inference).unwrap();
        let mut stepped = model.clone();
        let mut adam = AdamState::new(1e-4, &stepped.parameters());
        adam.step(&mut stepped.parameters_mut(), &grads).unwrap();
        let (after, _) = stepped.loss_and_grads(&x, label, Mode::Inference).unwrap();
        assert!(after < before, "sample {i}: {before} -> {after}");
    }
}

proptest! {
    #[test]
    fn early_stopping_snapshot_is_never_worse_than_best(
        accs in prop::collection::vec((0u8..5, 0.0f64..1.0), 1..30),
        patience in 1usize..6,
    ) {
        let mut es = EarlyStopping::new(patience);
        let mut seen = Vec::new();
        for (epoch, &(acc, loss)) in accs.iter().enumerate() {
            let acc = f64::from(acc) / 4.0;
            let marker = Tensor::scalar(epoch as f64);
            seen.push(acc);
            let decision = es.update(epoch + 1, acc, loss, &[&marker]);
            let best = es.best_epoch().unwrap();
            let top = seen.iter().copied().fold(f64::MIN, f64::max);
            prop_assert_eq!(seen[best - 1], top);
            prop_assert_eq!(es.best_params()[0].item().unwrap(), (best - 1) as f64);
            if decision == StopDecision::Stop {
                break;
            }
        }
    }
}
