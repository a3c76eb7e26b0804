use std::collections::BTreeSet;

use mp3dcnn::data_io::{generate_synthetic_dataset, Stimulus, SyntheticConfig, VolumeRecord};
use mp3dcnn::pipeline::{
    apply_task, class_counts, equalize, kfold_average, make_fold_plan, subject_holdout_split, subjects, FoldPlan,
    Task,
};
use mp3dcnn::{Rng, Tensor};

fn tiny(subject: &str, stimulus: Stimulus, n: usize) -> Vec<VolumeRecord> {
    (0..n)
        .map(|i| VolumeRecord {
            id: format!("{subject}-{stimulus}-{i:04}"),
            volume: Tensor::full(&[2, 2, 2], i as f32),
            label: None,
            subject: subject.into(),
            stimulus,
            averaged_from: 1,
        })
        .collect()
}

#[test]
fn averaging_a_4453_volume_group_by_nine() {
    let group = tiny("s", Stimulus::MaleFace, 4453);
    let out = kfold_average(&group, 9, &mut Rng::new(0)).unwrap();
    assert_eq!(out.len(), 4453 / 9);
    assert_eq!(out.len(), 494);
    assert_eq!(4453 - 9 * out.len(), 7);
}

#[test]
fn averaged_noise_shrinks_by_root_k() {
    let base = SyntheticConfig {
        n_subjects: 2,
        volumes_per_class: 36,
        noise_sigma: 2.0,
        seed: 17,
        ..Default::default()
    };
    let noisy = generate_synthetic_dataset(&base).unwrap();
    let clean = generate_synthetic_dataset(&SyntheticConfig {
        noise_sigma: 0.0,
        ..base.clone()
    })
    .unwrap();
    let averaged = kfold_average(&noisy, 9, &mut Rng::new(3)).unwrap();
    assert_eq!(averaged.len(), 2 * 4 * 4);
    // clean signal is shared within (subject, stimulus); take the group's first
    let (mut ss, mut n) = (0.0f64, 0usize);
    for r in &averaged {
        let c = clean.iter().find(|c| c.subject == r.subject && c.stimulus == r.stimulus).unwrap();
        for (&a, &b) in r.volume.data().iter().zip(c.volume.data()) {
            ss += (a as f64 - b as f64).powi(2);
            n += 1;
        }
    }
    let std = (ss / n as f64).sqrt();
    let target = base.noise_sigma / 3.0;
    assert!((std / target - 1.0).abs() < 0.10, "std {std} vs {target}");
}

#[test]
fn holding_out_five_of_fifty_subjects() {
    let records: Vec<VolumeRecord> = (0..50).flat_map(|i| tiny(&format!("sub{i:02}"), Stimulus::NaturalObject, 2)).collect();
    let holdout: BTreeSet<String> = ["sub03", "sub11", "sub27", "sub38", "sub49"].map(String::from).into();
    let (train, test) = subject_holdout_split(&records, &holdout).unwrap();
    assert_eq!(subjects(&train).len(), 45);
    assert_eq!(subjects(&test).len(), 5);
    assert!(subjects(&train).iter().all(|s| !holdout.contains(s)));
    assert_eq!(train.len() + test.len(), records.len());
}

#[test]
fn equalizing_to_734_per_class() {
    let records = [tiny("a", Stimulus::MaleFace, 500), tiny("a", Stimulus::FemaleFace, 420), tiny("b", Stimulus::ArtificialObject, 734)].concat();
    assert_eq!(class_counts(&records, Task::FaceVsObject), [734, 920]);
    let a = equalize(&records, Task::FaceVsObject, &mut Rng::new(11)).unwrap();
    assert_eq!(class_counts(&a, Task::FaceVsObject), [734, 734]);
    let b = equalize(&records, Task::FaceVsObject, &mut Rng::new(11)).unwrap();
    assert_eq!(a, b);
    let ids: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    assert!(a.iter().all(|r| ids.contains(r.id.as_str())));
}

#[test]
fn fold_plan_stratifies_and_round_trips() {
    let records = apply_task(
        &[tiny("a", Stimulus::MaleFace, 40), tiny("a", Stimulus::NaturalObject, 23)].concat(),
        Task::FaceVsObject,
    );
    let plan = make_fold_plan(&records, 9, 5).unwrap();
    let sizes = plan.fold_sizes();
    assert_eq!(sizes.iter().sum::<usize>(), 63);
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    let mut covered = vec![0; records.len()];
    for f in 0..9 {
        let v = plan.validation_indices(f);
        let faces = v.iter().filter(|&&i| records[i].label == Some(1)).count() as f64;
        let proportional = v.len() as f64 * 40.0 / 63.0;
        assert!((faces - proportional).abs() <= 1.0, "fold {f}: {faces} vs {proportional}");
        for i in v {
            covered[i] += 1;
        }
    }
    assert!(covered.iter().all(|&c| c == 1));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.json");
    plan.write(&path).unwrap();
    assert_eq!(FoldPlan::read(&path).unwrap(), plan);
    assert_ne!(make_fold_plan(&records, 9, 6).unwrap().assignments, plan.assignments);
}
