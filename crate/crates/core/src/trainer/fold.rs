use serde::{Deserialize, Serialize};

use crate::data_io::VolumeRecord;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::{ArchConfig, CombinePolicy, ModelKind, Mp3dcnnParams};
use crate::pipeline::FoldPlan;
use crate::tensor::{derive_seed, Precision, Rng, Scalar, Tensor};

use super::optim::{Optimizer, OptimizerKind};

/// Probability threshold for a positive prediction.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Full passes over the training set.
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub precision: Precision,
    pub combine: CombinePolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-5,
            epochs: 25,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            precision: Precision::Single,
            combine: CombinePolicy::SumThenConcat,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        Ok(())
    }

    /// The same configuration with the seed of fold `fold`.
    pub fn for_fold(&self, fold: usize) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, fold as u64),
            ..self.clone()
        }
    }
}

/// Metrics recorded after one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean of the mini-batch losses seen during the epoch.
    pub train_loss: f64,
    /// Accuracy of the train-mode predictions made during the epoch.
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Outcome of training on one fold: the selected parameters and the curve.
#[derive(Debug, Clone)]
pub struct FoldResult<T> {
    pub fold: usize,
    pub seed: u64,
    pub params: Mp3dcnnParams<T>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub curve: Vec<EpochRecord>,
}

impl<T: Scalar> FoldResult<T> {
    /// Provenance stored alongside the checkpoint.
    pub fn meta(&self) -> serde_json::Value {
        serde_json::json!({
            "fold": self.fold,
            "seed": self.seed,
            "best_epoch": self.best_epoch,
            "best_val_accuracy": self.best_val_accuracy,
        })
    }
}

fn labels_of(records: &[VolumeRecord]) -> Result<Vec<u8>> {
    records
        .iter()
        .map(|r| r.label.ok_or_else(|| Error::Unlabeled(r.id.clone())))
        .collect()
}

/// Stacks volumes into `[n, 1, h, w, d]`.
pub fn batch_tensor<T: Scalar>(records: &[&VolumeRecord]) -> Result<Tensor<T>> {
    let Some(first) = records.first() else {
        return Err(Error::EmptySplit("batch"));
    };
    let shape = first.volume.shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::shape("batch", &[0, 0, 0], &shape));
    }
    let mut data = Vec::with_capacity(records.len() * first.volume.len());
    for r in records {
        if r.volume.shape() != shape.as_slice() {
            return Err(Error::shape("batch", &shape, r.volume.shape()));
        }
        data.extend(r.volume.data().iter().map(|&v| T::of_f64(v as f64)));
    }
    Tensor::from_vec(&[records.len(), 1, shape[0], shape[1], shape[2]], data)
}

fn label_tensor<T: Scalar>(labels: &[u8]) -> Result<Tensor<T>> {
    Tensor::from_vec(&[labels.len()], labels.iter().map(|&l| T::of_f64(l as f64)).collect())
}

/// Eval-mode probabilities for `records`, computed `chunk` volumes at a time.
pub fn predict_probabilities<T: Scalar>(params: &Mp3dcnnParams<T>, records: &[VolumeRecord], chunk: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(records.len());
    let mut unused = Rng::new(0);
    for part in records.chunks(chunk.max(1)) {
        let refs: Vec<&VolumeRecord> = part.iter().collect();
        let trace = params.forward(&batch_tensor(&refs)?, Mode::Eval, &mut unused)?;
        out.extend(trace.probs.data().iter().map(|p| p.as_f64()));
    }
    Ok(out)
}

/// Fraction of `predicted` equal to `truth`.
pub fn accuracy(predicted: &[u8], truth: &[u8]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

pub fn threshold(probs: &[f64]) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= DECISION_THRESHOLD)).collect()
}

fn mean_bce(probs: &[f64], labels: &[u8]) -> f64 {
    let eps = crate::layers::BCE_CLAMP;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / labels.len() as f64
}

/// Trains one model from scratch and keeps the parameters of the epoch with
/// the highest validation accuracy; the earliest such epoch wins ties.
///
/// The seed of `config` fixes initialization (stream 0), the per-epoch
/// shuffles (stream 1) and dropout (stream 2).
pub fn train_fold<T: Scalar>(
    kind: ModelKind,
    arch: &ArchConfig,
    train: &[VolumeRecord],
    val: &[VolumeRecord],
    config: &TrainConfig,
) -> Result<FoldResult<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    let train_labels = labels_of(train)?;
    let val_labels = labels_of(val)?;
    let arch = ArchConfig {
        combine: config.combine,
        ..arch.clone()
    };

    let root = Rng::new(config.seed);
    let mut params = Mp3dcnnParams::<T>::init(kind, &arch, &root.derive(0))?;
    let mut shuffle_rng = root.derive(1);
    let mut dropout_rng = root.derive(2);
    let mut optimizer = Optimizer::new(config.optimizer, &params);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Mp3dcnnParams<T>)> = None;
    for epoch in 1..=config.epochs {
        shuffle_rng.shuffle(&mut order);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&VolumeRecord> = idx.iter().map(|&i| &train[i]).collect();
            let labels: Vec<u8> = idx.iter().map(|&i| train_labels[i]).collect();
            let x = batch_tensor::<T>(&batch)?;
            let y = label_tensor::<T>(&labels)?;
            let trace = params.forward(&x, Mode::Train, &mut dropout_rng)?;
            loss_sum += params.loss(&trace, &y)?.as_f64() * idx.len() as f64;
            let preds: Vec<f64> = trace.probs.data().iter().map(|p| p.as_f64()).collect();
            hits += threshold(&preds).iter().zip(&labels).filter(|(p, l)| p == l).count();
            let grads = params.backward(&trace, &y)?;
            optimizer.step(&mut params, &grads, config.learning_rate)?;
            params.apply_running_stats(&trace);
        }
        let val_probs = predict_probabilities(&params, val, config.batch_size)?;
        let val_accuracy = accuracy(&threshold(&val_probs), &val_labels);
        curve.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: hits as f64 / train.len() as f64,
            val_loss: mean_bce(&val_probs, &val_labels),
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(_, acc, _)| val_accuracy > *acc) {
            best = Some((epoch, val_accuracy, params.clone()));
        }
    }
    let (best_epoch, best_val_accuracy, params) = best.expect("at least one epoch");
    Ok(FoldResult {
        fold: 0,
        seed: config.seed,
        params,
        best_epoch,
        best_val_accuracy,
        train_size: train.len(),
        val_size: val.len(),
        curve,
    })
}

/// Trains fold `fold` of `plan`: validation is that fold, training is the rest.
pub fn train_cv_fold<T: Scalar>(
    kind: ModelKind,
    arch: &ArchConfig,
    pool: &[VolumeRecord],
    plan: &FoldPlan,
    config: &TrainConfig,
    fold: usize,
) -> Result<FoldResult<T>> {
    plan.check_pool(pool)?;
    if fold >= plan.n_folds {
        return Err(Error::InvalidConfig(format!("fold {fold} out of range for {} folds", plan.n_folds)));
    }
    let pick = |ix: Vec<usize>| -> Vec<VolumeRecord> { ix.into_iter().map(|i| pool[i].clone()).collect() };
    let train = pick(plan.training_indices(fold));
    let val = pick(plan.validation_indices(fold));
    let mut result = train_fold(kind, arch, &train, &val, &config.for_fold(fold))?;
    result.fold = fold;
    Ok(result)
}

/// Runs every fold of `plan`, each from its own derived seed, on up to
/// `parallel` worker threads. Results are in fold order.
pub fn run_cv<T: Scalar>(
    kind: ModelKind,
    arch: &ArchConfig,
    pool: &[VolumeRecord],
    plan: &FoldPlan,
    config: &TrainConfig,
    parallel: usize,
) -> Result<Vec<FoldResult<T>>> {
    plan.check_pool(pool)?;
    let job = |fold: usize| train_cv_fold(kind, arch, pool, plan, config, fold);
    if parallel <= 1 {
        return (0..plan.n_folds).map(job).collect();
    }
    use rayon::prelude::*;
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {parallel} worker threads: {e}")))?;
    workers.install(|| (0..plan.n_folds).into_par_iter().map(job).collect())
}
