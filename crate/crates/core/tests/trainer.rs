use phasenet_core::{ArchConfig, NetworkWeights, PyramidConfig};
use phasenet_core::trainer::*;
use phasenet_core::error::Error;

fn tiny() -> (ArchConfig, PyramidConfig, TrainConfig, TripletDataset) {
    let arch = ArchConfig {
        levels: 3,
        width: 4,
        ..ArchConfig::default()
    };
    let pyramid = PyramidConfig::with_levels(3);
    let config = TrainConfig {
        batch_size: 4,
        fine_batch_sizes: [3, 2],
        epochs: 2,
        fine_epochs: 1,
        patch: 16,
        seed: 9,
        ..TrainConfig::default()
    };
    let data = synthetic_triplets(&SyntheticConfig {
        count: 6,
        size: 20,
        max_shift: 3.0,
        ..SyntheticConfig::default()
    })
    .unwrap();
    (arch, pyramid, config, data)
}

#[test]
fn base_curriculum_has_nine_stages() {
    let weights = NetworkWeights::init(ArchConfig::default(), 0).unwrap();
    let stages = plan_stages(&weights, &TrainConfig::default());
    assert_eq!(stages.len(), 9);
    let trained: Vec<usize> = stages.iter().map(|s| s.trained).collect();
    assert_eq!(trained, vec![1, 2, 3, 4, 5, 6, 7, 8, 11]);
    let batches: Vec<usize> = stages.iter().map(|s| s.batch_size).collect();
    assert_eq!(batches, vec![32, 32, 32, 32, 32, 32, 32, 16, 12]);
    let epochs: Vec<usize> = stages.iter().map(|s| s.epochs).collect();
    assert_eq!(epochs, vec![12, 12, 12, 12, 12, 12, 12, 6, 6]);
    assert_eq!(stages[4].trainable, vec![0, 1, 2, 3, 4]);

    let frozen = TrainConfig {
        freeze_earlier: true,
        ..TrainConfig::default()
    };
    assert_eq!(plan_stages(&weights, &frozen)[4].trainable, vec![4]);

    let one = NetworkWeights::init(ArchConfig::with_levels(1), 0).unwrap();
    let stages = plan_stages(&one, &TrainConfig::default());
    assert_eq!(stages.iter().map(|s| s.trained).collect::<Vec<_>>(), vec![1, 2]);
}

#[test]
fn adam_matches_hand_derived_steps() {
    let cfg = TrainConfig::default();
    let (mut p, mut m, mut v) = (0.5, 0.0, 0.0);
    adam_update(&mut p, &mut m, &mut v, 0.2, 1, &cfg);
    // first step: bias-corrected moments equal g and g²
    let expected1 = 0.5 - 1e-3 * 0.2 / (0.2 + 1e-8);
    assert!((p - expected1).abs() < 1e-12);
    adam_update(&mut p, &mut m, &mut v, -0.4, 2, &cfg);
    let m2 = 0.9 * 0.1 * 0.2 + 0.1 * -0.4;
    let v2: f64 = 0.999 * 0.001 * 0.04 + 0.001 * 0.16;
    let expected2 = expected1 - 1e-3 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.998001)).sqrt() + 1e-8);
    assert!((p - expected2).abs() < 1e-12);
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let (arch, pyramid, mut config, data) = tiny();
    config.learning_rate = 0.0;
    let mut trainer = Trainer::new(arch, pyramid, config).unwrap();
    let before = trainer.weights.clone();
    let stage = trainer.stages()[1].clone();
    trainer.train_stage(&stage, &data, &mut |_| {}).unwrap();
    for (a, b) in before.groups.iter().zip(&trainer.weights.groups) {
        assert_eq!(a.params, b.params);
    }
    assert_ne!(before.groups[0].running, trainer.weights.groups[0].running);
}

#[test]
fn frozen_and_future_groups_do_not_move() {
    let (arch, pyramid, mut config, data) = tiny();
    config.freeze_earlier = true;
    let mut trainer = Trainer::new(arch, pyramid, config).unwrap();
    let init = trainer.weights.clone();
    let stages = trainer.stages();
    trainer.train_stage(&stages[0], &data, &mut |_| {}).unwrap();
    let after_first = trainer.weights.clone();
    assert_ne!(after_first.groups[0].params, init.groups[0].params);
    for g in 1..init.groups.len() {
        assert_eq!(after_first.groups[g], init.groups[g]);
    }
    trainer.train_stage(&stages[1], &data, &mut |_| {}).unwrap();
    assert_eq!(trainer.weights.groups[0].params, after_first.groups[0].params);
    assert_ne!(trainer.weights.groups[1].params, init.groups[1].params);
    assert_eq!(trainer.weights.groups[2].params, init.groups[2].params);
}

#[test]
fn checkpoints_round_trip_and_resume_exactly() {
    let (arch, pyramid, config, data) = tiny();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stage.ckpt");

    let mut full = Trainer::new(arch, pyramid, config.clone()).unwrap();
    let mut records = Vec::new();
    full.run(&data, &mut |r| records.push(*r), &mut |_| Ok(())).unwrap();
    assert_eq!(records.len(), 2 + 1 + 1);

    // stop after the first stage, reload, and finish
    let mut partial = Trainer::new(arch, pyramid, config).unwrap();
    let stages = partial.stages();
    partial.train_stage(&stages[0], &data, &mut |_| {}).unwrap();
    partial.next_stage = 1;
    let ck = partial.checkpoint();
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ck);
    let mut resumed = Trainer::resume(loaded).unwrap();
    resumed.run(&data, &mut |_| {}, &mut |_| Ok(())).unwrap();
    assert!(resumed.is_finished());
    assert_eq!(resumed.checkpoint(), full.checkpoint());

    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    resumed.checkpoint().save(&a).unwrap();
    full.checkpoint().save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let bytes = std::fs::read(&a).unwrap();
    std::fs::write(&a, &bytes[..bytes.len() - 10]).unwrap();
    assert!(matches!(Checkpoint::load(&a), Err(Error::Checksum)));
}

#[test]
fn empty_dataset_and_mismatched_configs_fail() {
    let (arch, pyramid, config, _) = tiny();
    assert!(Trainer::new(ArchConfig { levels: 4, ..arch }, pyramid, config.clone()).is_err());
    let bad = TrainConfig {
        beta1: 1.0,
        ..config.clone()
    };
    assert!(Trainer::new(arch, pyramid, bad).is_err());
    assert!(matches!(
        synthetic_triplets(&SyntheticConfig {
            count: 0,
            ..SyntheticConfig::default()
        }),
        Err(Error::InvalidConfig(_))
    ));
}
