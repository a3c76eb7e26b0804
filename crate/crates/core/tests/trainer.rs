use mp3dcnn::data_io::{generate_synthetic_dataset, Stimulus, SyntheticConfig, VolumeRecord};
use mp3dcnn::model::{ArchConfig, ModelKind, Mp3dcnnParams};
use mp3dcnn::pipeline::{apply_task, make_fold_plan, Task};
use mp3dcnn::trainer::{
    accuracy, evaluate, majority_vote, run_cv, train_cv_fold, train_fold, FoldModel, OptimizerKind, TrainConfig,
};
use mp3dcnn::{Error, Precision, Rng, Tensor};

fn tiny_set(seed: u64) -> Vec<VolumeRecord> {
    let cfg = SyntheticConfig {
        n_subjects: 2,
        volumes_per_class: 6,
        noise_sigma: 0.3,
        seed,
        ..Default::default()
    };
    apply_task(&generate_synthetic_dataset(&cfg).unwrap(), Task::FaceVsObject)
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        learning_rate: 1e-3,
        epochs: 6,
        seed: 3,
        precision: Precision::Double,
        ..Default::default()
    }
}

fn split(records: &[VolumeRecord]) -> (Vec<VolumeRecord>, Vec<VolumeRecord>) {
    records.iter().cloned().partition(|r| !r.id.ends_with("-005"))
}

#[test]
fn training_loss_decreases_on_separable_data() {
    let (train, val) = split(&tiny_set(1));
    let cfg = TrainConfig {
        epochs: 25,
        ..quick_config()
    };
    let r = train_fold::<f32>(ModelKind::Mp3dcnn, &ArchConfig::reduced(), &train, &val, &cfg).unwrap();
    assert_eq!(r.curve.len(), 25);
    assert!(r.curve[24].train_loss < r.curve[0].train_loss, "{:?}", r.curve);
    assert_eq!((r.train_size, r.val_size), (40, 8));
}

#[test]
fn selected_epoch_is_first_maximum_of_curve() {
    let (train, val) = split(&tiny_set(2));
    let r = train_fold::<f64>(ModelKind::Mp3dcnn, &ArchConfig::reduced(), &train, &val, &quick_config()).unwrap();
    let max = r.curve.iter().map(|e| e.val_accuracy).fold(f64::MIN, f64::max);
    let first = r.curve.iter().find(|e| e.val_accuracy == max).unwrap();
    assert_eq!(r.best_val_accuracy, max);
    assert_eq!(r.best_epoch, first.epoch);
}

#[test]
fn equal_seeds_give_identical_runs() {
    let (train, val) = split(&tiny_set(3));
    let arch = ArchConfig::reduced();
    let a = train_fold::<f64>(ModelKind::Baseline3dcnn, &arch, &train, &val, &quick_config()).unwrap();
    let b = train_fold::<f64>(ModelKind::Baseline3dcnn, &arch, &train, &val, &quick_config()).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.params, b.params);
    let other = TrainConfig {
        seed: 4,
        ..quick_config()
    };
    let c = train_fold::<f64>(ModelKind::Baseline3dcnn, &arch, &train, &val, &other).unwrap();
    assert_ne!(a.curve, c.curve);
}

#[test]
fn sgd_trains_too() {
    let (train, val) = split(&tiny_set(4));
    let cfg = TrainConfig {
        optimizer: OptimizerKind::Sgd,
        learning_rate: 0.05,
        epochs: 2,
        ..quick_config()
    };
    let r = train_fold::<f32>(ModelKind::Mp3dcnn, &ArchConfig::reduced(), &train, &val, &cfg).unwrap();
    assert!(r.curve.iter().all(|e| e.train_loss.is_finite()));
}

#[test]
fn empty_splits_and_bad_configs_are_rejected() {
    let (train, val) = split(&tiny_set(5));
    let arch = ArchConfig::reduced();
    let run = |t: &[VolumeRecord], v: &[VolumeRecord], c: &TrainConfig| {
        train_fold::<f32>(ModelKind::Mp3dcnn, &arch, t, v, c).map(|_| ())
    };
    assert!(matches!(run(&[], &val, &quick_config()), Err(Error::EmptySplit("train"))));
    assert!(matches!(run(&train, &[], &quick_config()), Err(Error::EmptySplit("validation"))));
    for bad in [
        TrainConfig { batch_size: 0, ..quick_config() },
        TrainConfig { epochs: 0, ..quick_config() },
        TrainConfig { learning_rate: 0.0, ..quick_config() },
    ] {
        assert!(matches!(run(&train, &val, &bad), Err(Error::InvalidConfig(_))));
    }
}

#[test]
fn cross_validation_folds_are_independent() {
    let pool = tiny_set(6);
    let plan = make_fold_plan(&pool, 3, 11).unwrap();
    let arch = ArchConfig::reduced();
    let cfg = TrainConfig {
        epochs: 2,
        ..quick_config()
    };
    let forward = run_cv::<f64>(ModelKind::Mp3dcnn, &arch, &pool, &plan, &cfg, 1).unwrap();
    assert_eq!(forward.len(), 3);
    let sizes = plan.fold_sizes();
    for (i, r) in forward.iter().enumerate() {
        assert_eq!(r.fold, i);
        assert_eq!(r.val_size, sizes[i]);
        assert_eq!(r.train_size, pool.len() - sizes[i]);
    }
    for fold in (0..3).rev() {
        let r = train_cv_fold::<f64>(ModelKind::Mp3dcnn, &arch, &pool, &plan, &cfg, fold).unwrap();
        assert_eq!(r.params, forward[fold].params);
        assert_eq!(r.curve, forward[fold].curve);
    }
    let parallel = run_cv::<f64>(ModelKind::Mp3dcnn, &arch, &pool, &plan, &cfg, 3).unwrap();
    for (a, b) in forward.iter().zip(&parallel) {
        assert_eq!(a.params, b.params);
    }
    assert!(run_cv::<f64>(ModelKind::Mp3dcnn, &arch, &pool[1..], &plan, &cfg, 1).is_err());
}

/// A model whose output ignores the input: sigmoid(bias).
fn constant_model(bias: f64) -> Mp3dcnnParams<f64> {
    let mut p = Mp3dcnnParams::<f64>::init(ModelKind::Mp3dcnn, &ArchConfig::reduced(), &Rng::new(0)).unwrap();
    p.cls2.weight = Tensor::zeros(p.cls2.weight.shape());
    p.cls2.bias = Tensor::full(&[1], bias);
    p
}

#[test]
fn perfect_predictors_vote_perfectly() {
    let faces: Vec<VolumeRecord> = tiny_set(7).into_iter().filter(|r| r.stimulus == Stimulus::MaleFace).collect();
    let models: Vec<FoldModel<f64>> = (0..9)
        .map(|_| FoldModel {
            params: constant_model(5.0),
            val_accuracy: 1.0,
        })
        .collect();
    let report = evaluate(&models, &faces, Task::FaceVsObject, "fp").unwrap();
    assert_eq!(report.voting_accuracy, 1.0);
    assert_eq!(report.fold_test_accuracy, vec![1.0; 9]);
    assert_eq!(report.confusion.true_positive, faces.len());
    assert_eq!(report.config_fingerprint, "fp");

    // all folds agree, so voting accuracy equals the per-fold accuracy
    let mixed = tiny_set(7);
    let report = evaluate(&models, &mixed, Task::FaceVsObject, "fp").unwrap();
    assert_eq!(report.voting_accuracy, 0.5);
    assert_eq!(report.fold_test_accuracy[0], 0.5);

    assert!(matches!(evaluate(&models, &[], Task::FaceVsObject, "fp"), Err(Error::EmptyTestSet)));
}

#[test]
fn hand_enumerated_three_voter_matrix() {
    let votes = vec![vec![1, 0, 1, 1], vec![1, 1, 0, 0], vec![0, 0, 1, 1]];
    // column tallies of ones: 2, 1, 2, 2 out of 3 voters
    let ensemble = majority_vote(&votes, None).unwrap();
    assert_eq!(ensemble, vec![1, 0, 1, 1]);
    assert_eq!(accuracy(&ensemble, &[1, 0, 0, 1]), 0.75);
}
