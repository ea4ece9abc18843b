mod common;

use neurofuzz::io::{load_model, save_model};
use neurofuzz::trainer::{evaluate, train, TrainConfig};
use neurofuzz::Architecture;

#[test]
fn short_training_beats_chance_and_survives_a_save() {
    let (train_split, test_split) = common::load_splits();
    let small = train_split.subset(&(0..600).collect::<Vec<_>>()).unwrap();
    let held = test_split.subset(&(0..300).collect::<Vec<_>>()).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        ..Default::default()
    };
    let (model, log) = train(Architecture::Lenet1, &small, &cfg, Some(&held)).unwrap();
    assert_eq!(log.epochs.len(), 2);
    assert!(log.epochs[1].loss < log.epochs[0].loss);
    let acc = evaluate(&model, &held).unwrap();
    assert!(acc > 0.5, "accuracy {acc}");
    assert_eq!(log.epochs[1].test_acc, Some(acc));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lenet1.json");
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(evaluate(&back, &held).unwrap(), acc);
}

#[test]
fn lenet1_reaches_97_percent_in_five_epochs_on_full_mnist() {
    let (_, external) = common::data_dir();
    if !external {
        eprintln!("NEUROFUZZ_DATA_DIR not set; needs the full 60k training set");
        return;
    }
    let (train_split, test_split) = common::load_splits();
    let cfg = TrainConfig {
        epochs: 5,
        ..Default::default()
    };
    let (model, _) = train(Architecture::Lenet1, &train_split, &cfg, None).unwrap();
    let acc = evaluate(&model, &test_split).unwrap();
    assert!(acc >= 0.97, "accuracy {acc}");
}
