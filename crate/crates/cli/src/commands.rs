use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mp3dcnn::data_io::nifti::parse_header;
use mp3dcnn::data_io::{
    decode_checkpoint, generate_synthetic_dataset, load_dataset, read_checkpoint, read_manifest, write_checkpoint,
    write_dataset, Nifti1Header, NiftiDatatype, SyntheticConfig, CHECKPOINT_MAGIC,
};
use mp3dcnn::layers::gradcheck::{layer_suite, GradcheckReport, LAYER_TOLERANCE, MODEL_TOLERANCE};
use mp3dcnn::model::{gradcheck_model, ArchConfig, ModelKind};
use mp3dcnn::pipeline::{
    apply_task, choose_holdout, class_counts, equalize, make_fold_plan, preprocess, subject_holdout_split, subjects,
    Task,
};
use mp3dcnn::tensor::derive_seed;
use mp3dcnn::trainer::{
    comparison_table, evaluate, fingerprint, run_cv, EpochRecord, FoldModel, TrainConfig, VotingReport,
};
use mp3dcnn::{Precision, Rng, Scalar};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TEST_MANIFEST_FILE: &str = "test.json";
pub const FOLD_PLAN_FILE: &str = "fold_plan.json";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "report.txt";

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing {flag} (flag or config file)")))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(mp3dcnn::Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_json<S: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<S> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(mp3dcnn::Error::from)?)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn generate(config: &RunConfig) -> CliResult<String> {
    let s = &config.generate;
    let out = required(&s.out, "--out")?;
    let synth = SyntheticConfig {
        n_subjects: s.subjects,
        volumes_per_class: s.per_class,
        shape: s.shape,
        noise_sigma: s.noise,
        amplitude: s.amplitude,
        seed: s.seed,
        ..SyntheticConfig::default()
    };
    let records = generate_synthetic_dataset(&synth)?;
    create_dir(out)?;
    let path = out.join(MANIFEST_FILE);
    let manifest = write_dataset(&path, &records, None)?;
    config.write_effective(out)?;
    Ok(format!(
        "wrote {}\n{} records: {} subjects x 4 stimuli x {} volumes, shape {:?}\n",
        path.display(),
        manifest.records.len(),
        s.subjects,
        s.per_class,
        s.shape
    ))
}

pub fn preprocess_cmd(config: &RunConfig) -> CliResult<String> {
    let s = &config.preprocess;
    let input = required(&s.manifest, "--manifest")?;
    let out = required(&s.out, "--out")?;
    let (_, records) = load_dataset(input)?;
    let mut rng = Rng::new(s.seed);
    let processed = match s.task {
        Some(task) => preprocess(&records, task, s.avg, s.equalize, s.order, &mut rng)?,
        None if s.equalize => return Err(CliError::Usage("--equalize needs --task".into())),
        None => mp3dcnn::pipeline::kfold_average(&records, s.avg, &mut rng.derive(1))?,
    };
    let dir = parent_dir(out);
    create_dir(&dir)?;
    let manifest = write_dataset(out, &processed, s.task.map(Task::name))?;
    config.write_effective(&dir)?;
    let mut msg = format!(
        "wrote {}\n{} -> {} records (avg {})\n",
        out.display(),
        records.len(),
        manifest.records.len(),
        s.avg
    );
    if let Some(task) = s.task {
        let [c0, c1] = class_counts(&processed, task);
        let _ = writeln!(msg, "class counts: 0 -> {c0}, 1 -> {c1}");
    }
    Ok(msg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub checkpoint: String,
    pub curve: String,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub train_size: usize,
    pub val_size: usize,
}

/// Everything `evaluate` needs to find and interpret a run's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub task: Task,
    pub model: ModelKind,
    pub precision: Precision,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub holdout_subjects: Vec<String>,
    pub pool_size: usize,
    pub test_size: usize,
    pub test_manifest: Option<String>,
    pub fingerprint: String,
    pub folds: Vec<FoldSummary>,
}

pub fn train(config: &RunConfig) -> CliResult<String> {
    let s = &config.train;
    let manifest_path = required(&s.manifest, "--manifest")?;
    let out = required(&s.out, "--out")?;
    let (manifest, records) = load_dataset(manifest_path)?;
    let arch = ArchConfig {
        combine: s.combine,
        ..ArchConfig::for_input(manifest.shape)?
    };
    let records = apply_task(&records, s.task);
    let rng = Rng::new(s.seed);
    let holdout: BTreeSet<String> = if s.holdout_subjects.is_empty() {
        choose_holdout(&records, s.holdout, &mut rng.derive(1))?
    } else {
        s.holdout_subjects.iter().cloned().collect()
    };
    let (mut pool, mut test) = subject_holdout_split(&records, &holdout)?;
    if s.equalize {
        pool = equalize(&pool, s.task, &mut rng.derive(2))?;
        if !test.is_empty() {
            test = equalize(&test, s.task, &mut rng.derive(3))?;
        }
    }
    let plan = make_fold_plan(&pool, s.folds, derive_seed(s.seed, 4))?;
    let train_config = s.train_config(derive_seed(s.seed, 5));
    train_config.validate()?;
    if s.parallel_folds == 0 {
        return Err(mp3dcnn::Error::InvalidConfig("parallel_folds must be at least 1".into()).into());
    }

    create_dir(out)?;
    plan.write(out.join(FOLD_PLAN_FILE))?;
    let test_manifest = if test.is_empty() {
        None
    } else {
        write_dataset(out.join(TEST_MANIFEST_FILE), &test, Some(s.task.name()))?;
        Some(TEST_MANIFEST_FILE.to_string())
    };
    let ids = |rs: &[mp3dcnn::data_io::VolumeRecord]| rs.iter().map(|r| r.id.clone()).collect::<Vec<_>>();
    let fp = fingerprint(&serde_json::json!({
        "task": s.task,
        "model": s.model,
        "arch": arch,
        "train": train_config,
        "folds": s.folds,
        "equalize": s.equalize,
        "seed": s.seed,
        "pool": ids(&pool),
        "test": ids(&test),
    }))?;

    let folds = match s.precision {
        Precision::Single => train_folds::<f32>(s.model, &arch, &pool, &plan, &train_config, s.parallel_folds, out)?,
        Precision::Double => train_folds::<f64>(s.model, &arch, &pool, &plan, &train_config, s.parallel_folds, out)?,
    };
    let summary = TrainSummary {
        task: s.task,
        model: s.model,
        precision: s.precision,
        arch,
        train: train_config,
        holdout_subjects: holdout.into_iter().collect(),
        pool_size: pool.len(),
        test_size: test.len(),
        test_manifest,
        fingerprint: fp,
        folds,
    };
    write_json(&out.join(TRAIN_SUMMARY_FILE), &summary)?;
    config.write_effective(out)?;

    let mut msg = format!(
        "{} on {}: {} training volumes from {} subjects, {} test volumes from {:?}\n",
        summary.model.name(),
        summary.task,
        summary.pool_size,
        subjects(&pool).len(),
        summary.test_size,
        summary.holdout_subjects
    );
    for f in &summary.folds {
        let _ = writeln!(
            msg,
            "fold {}: best validation accuracy {:.4} at epoch {} ({} train / {} val)",
            f.fold, f.best_val_accuracy, f.best_epoch, f.train_size, f.val_size
        );
    }
    let _ = writeln!(msg, "wrote {}", out.join(TRAIN_SUMMARY_FILE).display());
    Ok(msg)
}

fn train_folds<T: Scalar>(
    kind: ModelKind,
    arch: &ArchConfig,
    pool: &[mp3dcnn::data_io::VolumeRecord],
    plan: &mp3dcnn::pipeline::FoldPlan,
    config: &TrainConfig,
    parallel: usize,
    out: &Path,
) -> CliResult<Vec<FoldSummary>> {
    let results = run_cv::<T>(kind, arch, pool, plan, config, parallel)?;
    let mut folds = Vec::with_capacity(results.len());
    for r in results {
        let checkpoint = format!("fold_{}.ckpt", r.fold);
        let curve = format!("fold_{}.curve.json", r.fold);
        write_checkpoint(out.join(&checkpoint), &r.params, r.meta())?;
        write_json::<Vec<EpochRecord>>(&out.join(&curve), &r.curve)?;
        folds.push(FoldSummary {
            fold: r.fold,
            checkpoint,
            curve,
            best_epoch: r.best_epoch,
            best_val_accuracy: r.best_val_accuracy,
            train_size: r.train_size,
            val_size: r.val_size,
        });
    }
    Ok(folds)
}

fn evaluate_run<T: Scalar>(run: &Path, summary: &TrainSummary, test_path: &Path) -> CliResult<VotingReport> {
    let models = summary
        .folds
        .iter()
        .map(|f| {
            let (params, _) = read_checkpoint::<T>(run.join(&f.checkpoint), Some(summary.model))?;
            Ok(FoldModel {
                params,
                val_accuracy: f.best_val_accuracy,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let (_, records) = load_dataset(test_path)?;
    let test = apply_task(&records, summary.task);
    Ok(evaluate(&models, &test, summary.task, &summary.fingerprint)?)
}

pub fn evaluate_cmd(runs: &[PathBuf], test: Option<&Path>, table: Option<&Path>) -> CliResult<String> {
    if runs.is_empty() {
        return Err(CliError::Usage("evaluate needs at least one --run directory".into()));
    }
    let mut reports = Vec::with_capacity(runs.len());
    let mut msg = String::new();
    for run in runs {
        let summary: TrainSummary = read_json(&run.join(TRAIN_SUMMARY_FILE))?;
        let test_path = match (test, &summary.test_manifest) {
            (Some(t), _) => t.to_path_buf(),
            (None, Some(t)) => run.join(t),
            (None, None) => return Err(mp3dcnn::Error::EmptyTestSet.into()),
        };
        let report = match summary.precision {
            Precision::Single => evaluate_run::<f32>(run, &summary, &test_path)?,
            Precision::Double => evaluate_run::<f64>(run, &summary, &test_path)?,
        };
        write_json(&run.join(REPORT_FILE), &report)?;
        let _ = writeln!(
            msg,
            "{} {}: voting accuracy {:.4} on {} test volumes (folds: {})",
            run.display(),
            report.model.name(),
            report.voting_accuracy,
            report.n_test,
            report
                .fold_test_accuracy
                .iter()
                .map(|a| format!("{a:.3}"))
                .collect::<Vec<_>>()
                .join(" ")
        );
        reports.push(report);
    }
    let text = comparison_table(&reports);
    let table_path = table.map_or_else(|| runs[0].join(TABLE_FILE), Path::to_path_buf);
    std::fs::write(&table_path, &text).map_err(|e| CliError::io(&table_path, e))?;
    msg.push('\n');
    msg.push_str(&text);
    Ok(msg)
}

#[derive(Debug, Serialize)]
struct GradcheckOutput<'a> {
    precision: Precision,
    seed: u64,
    reports: &'a [GradcheckReport],
    passed: bool,
}

pub fn gradcheck(config: &RunConfig, out: Option<&Path>) -> CliResult<String> {
    let s = &config.gradcheck;
    if s.precision != Precision::Double {
        return Err(mp3dcnn::Error::InvalidConfig(
            "finite-difference checks need double precision (--precision double)".into(),
        )
        .into());
    }
    let mut reports = layer_suite(s.seed, LAYER_TOLERANCE)?;
    if !s.layers_only {
        for kind in [ModelKind::Mp3dcnn, ModelKind::Baseline3dcnn] {
            reports.push(gradcheck_model(kind, &ArchConfig::reduced(), s.batch, s.seed, MODEL_TOLERANCE)?);
        }
    }
    let mut msg = String::new();
    for r in &reports {
        let tol = r.entries.first().map_or(0.0, |e| e.tolerance);
        let status = if r.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(msg, "{status} {:<40} max rel err {:.3e} (tol {tol:.0e})", r.subject, r.max_rel_err());
    }
    let passed = reports.iter().all(GradcheckReport::passed);
    if let Some(out) = out {
        create_dir(out)?;
        write_json(
            &out.join("gradcheck.json"),
            &GradcheckOutput {
                precision: s.precision,
                seed: s.seed,
                reports: &reports,
                passed,
            },
        )?;
        config.write_effective(out)?;
    }
    if !passed {
        print!("{msg}");
        let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.subject.as_str()).collect();
        return Err(CliError::GradcheckFailed(failed.join(", ")));
    }
    Ok(msg)
}

fn describe_nifti(h: &Nifti1Header) -> String {
    let rank = h.dim[0] as usize;
    let dims: Vec<String> = h.dim[..=rank].iter().map(i16::to_string).collect();
    let pixdim: Vec<String> = h.pixdim[1..=rank].iter().map(f32::to_string).collect();
    let dtype = NiftiDatatype::from_code(h.datatype).map_or("unknown", |d| match d {
        NiftiDatatype::Int16 => "int16",
        NiftiDatatype::Float32 => "float32",
        NiftiDatatype::Float64 => "float64",
    });
    let mut s = String::new();
    let _ = writeln!(s, "NIfTI-1 single file ({:?} endian)", h.endianness);
    let _ = writeln!(s, "dim = [{}]", dims.join(","));
    let _ = writeln!(s, "datatype = {dtype} (code {}, bitpix {})", h.datatype, h.bitpix);
    let _ = writeln!(s, "pixdim = [{}]", pixdim.join(","));
    let _ = writeln!(s, "vox_offset = {}", h.vox_offset);
    if h.is_scaled() {
        let _ = writeln!(s, "scaling = {} * v + {}", h.scl_slope, h.scl_inter);
    }
    s
}

pub fn inspect(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.starts_with(&CHECKPOINT_MAGIC) {
        let ckpt = decode_checkpoint(&bytes)?;
        let mut s = format!(
            "checkpoint: {} {:?} input {:?}\nmeta: {}\n",
            ckpt.header.kind.name(),
            ckpt.header.arch.combine,
            ckpt.header.arch.input,
            ckpt.header.meta
        );
        for (name, t) in &ckpt.tensors {
            let _ = writeln!(s, "  {name:<22} {:?} {}", t.shape(), t.precision().name());
        }
        return Ok(s);
    }
    if bytes.first() == Some(&b'{') {
        let m = read_manifest(path)?;
        let mut s = format!(
            "manifest: {} records, shape {:?}, task {}\n",
            m.records.len(),
            m.shape,
            m.task.as_deref().unwrap_or("-")
        );
        for ((subject, stimulus), n) in m.group_counts() {
            let _ = writeln!(s, "  {subject:<8} {:<18} {n}", stimulus.name());
        }
        return Ok(s);
    }
    Ok(describe_nifti(&parse_header(&bytes)?))
}
