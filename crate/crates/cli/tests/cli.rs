use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::Parser;
use mp3dcnn::data_io::{read_manifest, write_nifti1, NiftiWriteOptions};
use mp3dcnn::Tensor;
use mp3dcnn_cli::args::{Cli, Command as Sub};
use mp3dcnn_cli::config::RunConfig;
use mp3dcnn_cli::exit;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mp3dcnn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn mp3dcnn")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> u8 {
    out.status.code().expect("exit code") as u8
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn digest(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

fn generate_small(dir: &Path, subjects: usize, per_class: usize) -> PathBuf {
    ok(&[
        "generate",
        "--out",
        s(dir),
        "--subjects",
        &subjects.to_string(),
        "--per-class",
        &per_class.to_string(),
        "--shape",
        "24,24,24",
        "--seed",
        "7",
    ]);
    dir.join("manifest.json")
}

#[test]
fn generate_counts_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = |d: &Path| {
        vec![
            "generate".to_string(),
            "--subjects".into(),
            "10".into(),
            "--per-class".into(),
            "40".into(),
            "--shape".into(),
            "24,24,24".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            s(d).into(),
        ]
    };
    let out = bin().args(args(&a)).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("1600 records"));
    let manifest = read_manifest(a.join("manifest.json")).unwrap();
    assert_eq!(manifest.records.len(), 10 * 4 * 40);
    assert!(bin().args(args(&b)).output().unwrap().status.success());
    for name in ["manifest.json", "manifest.s00.f32", "manifest.s09.f32"] {
        assert_eq!(digest(&a.join(name)), digest(&b.join(name)), "{name}");
    }
}

#[test]
fn too_small_shape_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["generate", "--out", s(tmp.path()), "--shape", "4,4,4"]);
    assert_eq!(code(&out), exit::CONFIG);
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid volume shape [4, 4, 4]"));
    assert!(out.stdout.is_empty());
}

#[test]
fn malformed_flags_are_usage_errors() {
    assert_eq!(code(&run(&["generate", "--shape", "24,24"])), exit::USAGE);
    assert_eq!(code(&run(&["train", "--task", "faces"])), exit::USAGE);
    assert_eq!(code(&run(&["train"])), exit::USAGE);
}

#[test]
fn preprocess_averaging_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = generate_small(&tmp.path().join("raw"), 2, 40);
    let a1 = tmp.path().join("avg1/manifest.json");
    ok(&["preprocess", "--manifest", s(&manifest), "--out", s(&a1), "--avg", "1"]);
    assert_eq!(read_manifest(&a1).unwrap().records.len(), 2 * 4 * 40);
    let a9 = tmp.path().join("avg9/manifest.json");
    ok(&["preprocess", "--manifest", s(&manifest), "--out", s(&a9), "--avg", "9"]);
    let m = read_manifest(&a9).unwrap();
    assert!(m.group_counts().values().all(|&n| n == 4));
    assert!(m.records.iter().all(|r| r.averaged_from == 9));
    assert!(tmp.path().join("avg9/effective_config.toml").exists());
}

#[test]
fn preprocess_equalize_ten_versus_seven() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = generate_small(&tmp.path().join("raw"), 1, 10);
    let mut m = read_manifest(&manifest).unwrap();
    let mut female = 0;
    m.records.retain(|r| {
        if r.stimulus.name() == "female_face" {
            female += 1;
            female <= 7
        } else {
            true
        }
    });
    mp3dcnn::data_io::write_manifest(&manifest, &m).unwrap();
    let out = tmp.path().join("eq/manifest.json");
    let text = ok(&[
        "preprocess",
        "--manifest",
        s(&manifest),
        "--out",
        s(&out),
        "--task",
        "male_vs_female_face",
        "--equalize",
    ]);
    assert!(text.contains("class counts: 0 -> 7, 1 -> 7"), "{text}");
    let eq = read_manifest(&out).unwrap();
    assert_eq!(eq.records.len(), 14);
    assert_eq!(eq.task.as_deref(), Some("male_vs_female_face"));

    let err = run(&["preprocess", "--manifest", s(&manifest), "--out", s(&out), "--equalize"]);
    assert_eq!(code(&err), exit::USAGE);
}

fn train_small(manifest: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec![
        "train",
        "--manifest",
        s(manifest),
        "--out",
        s(out),
        "--folds",
        "3",
        "--epochs",
        "2",
        "--batch",
        "8",
        "--lr",
        "0.001",
        "--holdout",
        "1",
        "--precision",
        "double",
        "--seed",
        "5",
    ];
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn pipeline_is_reproducible_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = generate_small(&tmp.path().join("raw"), 3, 3);
    let (a, b) = (tmp.path().join("run_a"), tmp.path().join("run_b"));
    let text = train_small(&manifest, &a, &[]);
    assert!(text.contains("fold 2: best validation accuracy"), "{text}");
    train_small(&manifest, &b, &[]);
    for name in ["fold_plan.json", "fold_0.ckpt", "fold_2.ckpt", "fold_1.curve.json", "train_summary.json", "test.json"] {
        assert_eq!(digest(&a.join(name)), digest(&b.join(name)), "{name}");
    }
    let table = tmp.path().join("table.txt");
    let text = ok(&["evaluate", "--run", s(&a), "--table", s(&table)]);
    assert!(text.contains("voting accuracy"));
    ok(&["evaluate", "--run", s(&b)]);
    assert_eq!(digest(&a.join("report.json")), digest(&b.join("report.json")));
    let table = std::fs::read_to_string(&table).unwrap();
    assert!(table.contains("Face vs. Object (no avg)"));
    assert!(table.contains("Face vs. Object (9-fold avg)"));

    let inspected = ok(&["inspect", s(&a.join("fold_0.ckpt"))]);
    assert!(inspected.contains("checkpoint: mp3dcnn"));
    let inspected = ok(&["inspect", s(&a.join("test.json"))]);
    assert!(inspected.contains("manifest: 12 records"), "{inspected}");
}

#[test]
fn baseline_and_mp3dcnn_share_one_table() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = generate_small(&tmp.path().join("raw"), 3, 3);
    let (a, b) = (tmp.path().join("mp"), tmp.path().join("base"));
    train_small(&manifest, &a, &["--precision", "single"]);
    train_small(&manifest, &b, &["--model", "baseline_3dcnn", "--precision", "single"]);
    let text = ok(&["evaluate", "--run", s(&a), "--run", s(&b)]);
    let row = text.lines().find(|l| l.starts_with("Face vs. Object (no avg)")).unwrap();
    assert_eq!(row.matches('%').count(), 2, "{text}");
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = generate_small(&tmp.path().join("raw"), 3, 3);
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "[train]\nepochs = 1\nbatch = 4\nfolds = 3\nholdout = 1\nmodel = \"baseline_3dcnn\"\n").unwrap();
    let out = tmp.path().join("run");
    ok(&[
        "--config",
        s(&cfg),
        "train",
        "--manifest",
        s(&manifest),
        "--out",
        s(&out),
        "--epochs",
        "2",
        "--precision",
        "double",
    ]);
    let eff = RunConfig::from_toml(&std::fs::read_to_string(out.join("effective_config.toml")).unwrap()).unwrap();
    assert_eq!(eff.train.epochs, 2);
    assert_eq!(eff.train.batch, 4);
    assert_eq!(eff.train.lr, 1e-5);
    assert_eq!(eff.train.model.name(), "baseline_3dcnn");

    std::fs::write(&cfg, "[train]\nepoch = 1\n").unwrap();
    let bad = run(&["--config", s(&cfg), "train", "--manifest", s(&manifest), "--out", s(&out)]);
    assert_eq!(code(&bad), exit::CONFIG);
}

#[test]
fn protocol_defaults_are_flag_defaults() {
    let cli = Cli::try_parse_from([
        "mp3dcnn", "train", "--task", "face_vs_object", "--folds", "9", "--epochs", "25", "--batch", "64", "--lr",
        "0.00001",
    ])
    .unwrap();
    let Sub::Train(args) = &cli.command else { panic!("train") };
    let mut with_flags = RunConfig::default();
    with_flags.apply_train(args);
    assert_eq!(with_flags, RunConfig::default());
}

#[test]
fn training_errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = run(&["train", "--manifest", s(&tmp.path().join("nope.json")), "--out", s(tmp.path())]);
    assert_eq!(code(&missing), exit::IO);
    let manifest = generate_small(&tmp.path().join("raw"), 3, 3);
    let unknown = run(&[
        "train",
        "--manifest",
        s(&manifest),
        "--out",
        s(&tmp.path().join("r")),
        "--holdout-subjects",
        "s99",
    ]);
    assert_eq!(code(&unknown), exit::PROTOCOL);
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("unknown subject `s99`"));
    let few = run(&[
        "train",
        "--manifest",
        s(&manifest),
        "--out",
        s(&tmp.path().join("r")),
        "--folds",
        "100",
    ]);
    assert_eq!(code(&few), exit::PROTOCOL);
}

#[test]
fn gradcheck_double_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ok(&["gradcheck", "--precision", "double", "--out", s(tmp.path())]);
    assert!(!text.contains("FAIL"));
    assert!(text.contains("mp3dcnn model"));
    assert!(tmp.path().join("gradcheck.json").exists());
    assert_eq!(code(&run(&["gradcheck", "--precision", "single", "--layers-only"])), exit::CONFIG);
}

#[test]
fn inspect_nifti_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("full.nii");
    write_nifti1(&path, &Tensor::<f64>::zeros(&[79, 95, 79]), &NiftiWriteOptions::default()).unwrap();
    let text = ok(&["inspect", s(&path)]);
    assert!(text.contains("dim = [3,79,95,79]"), "{text}");

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/nifti");
    let bad = run(&["inspect", s(&fixtures.join("bad_magic.nii"))]);
    assert_eq!(code(&bad), exit::DATA);
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error: bad NIfTI magic"));
    let scaled = ok(&["inspect", s(&fixtures.join("be_i16_scaled.nii"))]);
    assert!(scaled.contains("Big") && scaled.contains("scaling = 0.5 * v + -3"), "{scaled}");
}
