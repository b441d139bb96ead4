mod common;

use vlg::dataset::{split_of, ReferenceInstance, Split};
use vlg::evaluation::evaluate;
use vlg::features::synth::{generate_dataset, SynthDatasetSpec};
use vlg::model::{load_checkpoint, Variant};
use vlg::training::{train, TrainConfig, TrainError};

use common::{small_synth, tiny_model};

fn dataset(pairs: usize, valid_fraction: f64, seed: u64) -> vlg::features::synth::SynthDataset {
    let mut spec = SynthDatasetSpec::new(16, pairs, seed);
    spec.valid_fraction = valid_fraction;
    spec.test_fraction = 0.0;
    spec.config = small_synth(16);
    generate_dataset(&spec).unwrap()
}

fn quick(epochs: usize, batch: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: batch,
        warmup_steps: 5,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn one_epoch_of_ten_with_batch_four_is_three_steps() {
    let data = dataset(12, 2.0 / 12.0, 1);
    assert_eq!(split_of(&data.instances, Split::Train).len(), 10);
    let out = train(&quick(1, 4, 0), &tiny_model(Variant::Full), &data.instances, &data.archive, None).unwrap();
    assert_eq!(out.record.epochs.len(), 1);
    assert_eq!(out.record.epochs[0].steps, 3);
}

#[test]
fn same_seed_same_losses() {
    let data = dataset(30, 0.2, 2);
    let model = tiny_model(Variant::Full);
    let a = train(&quick(3, 4, 9), &model, &data.instances, &data.archive, None).unwrap();
    let b = train(&quick(3, 4, 9), &model, &data.instances, &data.archive, None).unwrap();
    let bits = |r: &vlg::training::RunRecord| -> Vec<u64> {
        r.epochs.iter().map(|e| e.train_loss.to_bits()).collect()
    };
    assert_eq!(bits(&a.record), bits(&b.record));
    assert_eq!(a.record.to_text(), b.record.to_text());
    let c = train(&quick(3, 4, 10), &model, &data.instances, &data.archive, None).unwrap();
    assert_ne!(bits(&a.record), bits(&c.record));
}

#[test]
fn best_epoch_maximises_validation_all() {
    let data = dataset(40, 0.25, 3);
    let out = train(&quick(5, 8, 1), &tiny_model(Variant::Full), &data.instances, &data.archive, None).unwrap();
    let best = out.record.best().valid.all;
    assert!(out.record.epochs.iter().all(|e| e.valid.all <= best));
    let first_best = out.record.epochs.iter().position(|e| e.valid.all == best).unwrap() + 1;
    assert_eq!(out.record.best_epoch, first_best);
    assert!(out.record.to_text().contains(&format!("best_epoch={first_best}\n")));
}

#[test]
fn checkpoint_reload_reproduces_validation_accuracy() {
    let data = dataset(40, 0.25, 4);
    let dir = tempfile::tempdir().unwrap();
    for variant in Variant::ALL {
        let out = train(&quick(3, 8, 2), &tiny_model(variant), &data.instances, &data.archive, Some(dir.path())).unwrap();
        let ckpt = load_checkpoint(&dir.path().join("best.vlgc")).unwrap();
        assert_eq!(ckpt.params, out.best);
        let valid = split_of(&data.instances, Split::Valid);
        let acc = evaluate(&valid, &data.archive, &ckpt.params).unwrap();
        assert_eq!(acc, out.record.best().valid, "{variant}");
    }
}

#[test]
fn parameters_stay_finite_without_clipping() {
    let data = dataset(48, 0.25, 5);
    for variant in Variant::ALL {
        let cfg = TrainConfig {
            base_lr: 1e-2,
            ..quick(4, 4, 3)
        };
        let out = train(&cfg, &tiny_model(variant), &data.instances, &data.archive, None).unwrap();
        assert!(out.last.all_finite(), "{variant}");
    }
}

#[test]
fn empty_splits_are_refused() {
    let data = dataset(20, 0.0, 6);
    let err = train(&quick(1, 4, 0), &tiny_model(Variant::Full), &data.instances, &data.archive, None).unwrap_err();
    assert!(matches!(err, TrainError::EmptySplit(Split::Valid)));
    let only_valid: Vec<ReferenceInstance> = data
        .instances
        .iter()
        .map(|i| ReferenceInstance { split: Split::Valid, ..i.clone() })
        .collect();
    let err = train(&quick(1, 4, 0), &tiny_model(Variant::Full), &only_valid, &data.archive, None).unwrap_err();
    assert!(matches!(err, TrainError::EmptySplit(Split::Train)));
    let mut bad = quick(1, 4, 0);
    bad.loss.smoothing = 0.6;
    assert!(matches!(
        train(&bad, &tiny_model(Variant::Full), &data.instances, &data.archive, None),
        Err(TrainError::Config(_))
    ));
}

#[test]
fn max_steps_stops_mid_epoch() {
    let data = dataset(40, 0.25, 7);
    let cfg = TrainConfig {
        max_steps: Some(5),
        ..quick(10, 4, 0)
    };
    let out = train(&cfg, &tiny_model(Variant::VisiolinguisticOnly), &data.instances, &data.archive, None).unwrap();
    assert_eq!(out.record.epochs.last().unwrap().steps, 5);
}
