mod common;

use common::*;
use televit::nn::Parameters;
use televit::training::{
    fingerprint, lr_schedule, select_best, train, Checkpoint, LogRecord, TrainConfig,
};
use televit::TeleVit;

fn short_run(seed: u64, lr: f64) -> (televit::training::TrainOutcome, Vec<LogRecord>, Fixture) {
    let f = fixture(seed, 1);
    let model = TeleVit::new(fixture_model_config(&f), seed).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        lr,
        horizon: 1,
        ..fixture_train_config(seed)
    };
    let train_set = &f.train[..64];
    let val_set = &f.val[..32];
    let mut log = Vec::new();
    let out = train(model, train_set, val_set, &cfg, &mut |r| {
        log.push(r.clone())
    })
    .unwrap();
    (out, log, f)
}

#[test]
fn same_seed_reproduces_the_log() {
    let (a, log_a, _) = short_run(0, 1e-3);
    let (b, log_b, _) = short_run(0, 1e-3);
    assert_eq!(log_a, log_b);
    assert_eq!(a.best, b.best);
    // 64 samples in batches of 16 for 2 epochs, plus one record per epoch.
    assert_eq!(log_a.len(), 10);
    assert_eq!(log_a.iter().filter(|r| r.val_loss.is_some()).count(), 2);
    assert_eq!(select_best(&a.val_losses), Some(a.best_epoch));
}

#[test]
fn learning_rate_follows_warmup_and_cosine() {
    let (_, log, _) = short_run(1, 2e-3);
    let steps: Vec<&LogRecord> = log.iter().filter(|r| r.val_loss.is_none()).collect();
    for r in &steps {
        assert_eq!(r.lr, lr_schedule(r.step, 8, 2e-3, 0.05));
    }
    assert_eq!(steps[0].lr, 0.0);
    assert_eq!(steps[1].lr, 2e-3);
    assert!(steps.last().unwrap().lr.abs() < 1e-18);
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let f = fixture(2, 0);
    let model = TeleVit::new(fixture_model_config(&f), 2).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        lr: 0.0,
        ..fixture_train_config(2)
    };
    let out = train(
        model.clone(),
        &f.train[..32],
        &f.val[..16],
        &cfg,
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(out.last, model);
}

#[test]
fn variant_mismatch_is_a_config_error() {
    let f = fixture(2, 0);
    let model = TeleVit::new(fixture_model_config(&f), 2).unwrap();
    let cfg = TrainConfig {
        use_indices: false,
        ..fixture_train_config(2)
    };
    let err = train(model, &f.train[..16], &f.val[..16], &cfg, &mut |_| {}).unwrap_err();
    assert_eq!(err.category(), "config");
}

#[test]
fn checkpoints_round_trip_exactly() {
    let (out, _, f) = short_run(3, 1e-3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h1").join("best.safetensors");
    let ckpt = Checkpoint {
        model: out.best.clone(),
        train_config: TrainConfig {
            horizon: 1,
            ..fixture_train_config(3)
        },
        epoch: out.best_epoch,
        val_loss: out.best_val_loss,
        stats: Some(f.stats.clone()),
        layout: Some(f.layout.clone()),
        data_fingerprint: "cube".into(),
        stats_fingerprint: fingerprint(&f.stats),
    };
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    let mut n = 0;
    back.model.visit("", &mut |_, _| n += 1);
    assert!(n > 10);

    std::fs::write(dir.path().join("junk"), b"not a checkpoint").unwrap();
    let err = Checkpoint::load(&dir.path().join("junk")).unwrap_err();
    assert_eq!(err.category(), "format");
}
