use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_io::VolumeRecord;
use crate::error::{Error, Result};
use crate::model::{ModelKind, Mp3dcnnParams};
use crate::pipeline::Task;
use crate::tensor::Scalar;

use super::fold::{accuracy, predict_probabilities, threshold};
use super::vote::majority_vote;

/// Binary confusion counts with class 1 as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub true_negative: usize,
    pub false_positive: usize,
    pub false_negative: usize,
}

impl Confusion {
    pub fn from_labels(predicted: &[u8], truth: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (1, 1) => c.true_positive += 1,
                (0, 0) => c.true_negative += 1,
                (1, _) => c.false_positive += 1,
                _ => c.false_negative += 1,
            }
        }
        c
    }
}

/// Ensemble evaluation of the cross-validation models on a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotingReport {
    pub task: Task,
    pub model: ModelKind,
    /// Number of raw volumes averaged into each test volume.
    pub averaged_from: usize,
    pub n_test: usize,
    pub fold_val_accuracy: Vec<f64>,
    pub fold_test_accuracy: Vec<f64>,
    pub voting_accuracy: f64,
    pub confusion: Confusion,
    pub config_fingerprint: String,
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn fingerprint<S: Serialize>(value: &S) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// One model per fold together with its best validation accuracy.
pub struct FoldModel<T> {
    pub params: Mp3dcnnParams<T>,
    pub val_accuracy: f64,
}

/// Evaluates every fold model on `test` in eval mode and majority-votes
/// their thresholded predictions.
pub fn evaluate<T: Scalar>(
    models: &[FoldModel<T>],
    test: &[VolumeRecord],
    task: Task,
    config_fingerprint: &str,
) -> Result<VotingReport> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let Some(first) = models.first() else {
        return Err(Error::InvalidConfig("evaluation needs at least one fold model".into()));
    };
    let model = first.params.kind;
    if let Some(other) = models.iter().find(|m| m.params.kind != model) {
        return Err(Error::InvalidConfig(format!(
            "fold models mix {} and {}",
            model.name(),
            other.params.kind.name()
        )));
    }
    let truth: Vec<u8> = test
        .iter()
        .map(|r| task.label(r.stimulus).ok_or_else(|| Error::Unlabeled(r.id.clone())))
        .collect::<Result<_>>()?;
    let mut probs = Vec::with_capacity(models.len());
    let mut votes = Vec::with_capacity(models.len());
    for m in models {
        let p = predict_probabilities(&m.params, test, 64)?;
        votes.push(threshold(&p));
        probs.push(p);
    }
    let ensemble = majority_vote(&votes, Some(&probs))?;
    Ok(VotingReport {
        task,
        model,
        averaged_from: test.iter().map(|r| r.averaged_from).min().unwrap_or(1),
        n_test: test.len(),
        fold_val_accuracy: models.iter().map(|m| m.val_accuracy).collect(),
        fold_test_accuracy: votes.iter().map(|v| accuracy(v, &truth)).collect(),
        voting_accuracy: accuracy(&ensemble, &truth),
        confusion: Confusion::from_labels(&ensemble, &truth),
        config_fingerprint: config_fingerprint.to_string(),
    })
}

fn row_label(task: Task, averaged_from: usize) -> String {
    match averaged_from {
        1 => format!("{} (no avg)", task.title()),
        k => format!("{} ({k}-fold avg)", task.title()),
    }
}

/// Plain-text comparison of voting accuracies: one row per task and
/// averaging level, one column per model kind. Rows for both the unaveraged
/// and the 9-fold averaged variant of every task present are always shown;
/// missing cells print `-`.
pub fn comparison_table(reports: &[VotingReport]) -> String {
    let models = [ModelKind::Baseline3dcnn, ModelKind::Mp3dcnn];
    let mut cells: BTreeMap<(Task, usize), [Option<f64>; 2]> = BTreeMap::new();
    for r in reports {
        for k in [1, 9] {
            cells.entry((r.task, k)).or_default();
        }
        let col = models.iter().position(|&m| m == r.model).expect("known model");
        cells.entry((r.task, r.averaged_from)).or_default()[col] = Some(r.voting_accuracy);
    }
    let labels: Vec<String> = cells.keys().map(|&(t, k)| row_label(t, k)).collect();
    let width = labels.iter().map(String::len).chain(["Classification".len()]).max().unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>14}  {:>8}", "Classification", models[0].name(), models[1].name());
    let _ = writeln!(out, "{}", "-".repeat(width + 26));
    for (label, accs) in labels.iter().zip(cells.values()) {
        let cell = |a: Option<f64>| a.map_or_else(|| "-".to_string(), |v| format!("{:.2}%", 100.0 * v));
        let _ = writeln!(out, "{label:<width$}  {:>14}  {:>8}", cell(accs[0]), cell(accs[1]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(task: Task, model: ModelKind, k: usize, acc: f64) -> VotingReport {
        VotingReport {
            task,
            model,
            averaged_from: k,
            n_test: 10,
            fold_val_accuracy: vec![],
            fold_test_accuracy: vec![],
            voting_accuracy: acc,
            confusion: Confusion::default(),
            config_fingerprint: String::new(),
        }
    }

    #[test]
    fn table_reserves_both_rows() {
        let t = comparison_table(&[report(Task::FaceVsObject, ModelKind::Mp3dcnn, 1, 0.95)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("Face vs. Object (no avg)") && lines[2].ends_with("95.00%"));
        assert!(lines[3].starts_with("Face vs. Object (9-fold avg)") && lines[3].ends_with('-'));
    }

    #[test]
    fn confusion_counts() {
        let c = Confusion::from_labels(&[1, 1, 0, 0, 1], &[1, 0, 0, 1, 1]);
        assert_eq!((c.true_positive, c.false_positive, c.true_negative, c.false_negative), (2, 1, 1, 1));
    }

    #[test]
    fn fingerprint_is_stable() {
        let a = fingerprint(&serde_json::json!({"lr": 1e-5})).unwrap();
        assert_eq!(a, fingerprint(&serde_json::json!({"lr": 1e-5})).unwrap());
        assert_ne!(a, fingerprint(&serde_json::json!({"lr": 2e-5})).unwrap());
        assert_eq!(a.len(), 64);
    }
}
