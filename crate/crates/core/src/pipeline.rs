//! Dataset preparation: task labeling, k-fold volume averaging, class
//! equalization, subject-level holdout and stratified cross-validation
//! fold plans.
//!
//! Every operation is a pure function of its inputs and an explicit RNG.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data_io::{Stimulus, VolumeRecord};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// The three binary classification problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    FaceVsObject,
    MaleVsFemaleFace,
    NaturalVsArtificialObject,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::FaceVsObject, Task::MaleVsFemaleFace, Task::NaturalVsArtificialObject];

    pub fn name(self) -> &'static str {
        match self {
            Task::FaceVsObject => "face_vs_object",
            Task::MaleVsFemaleFace => "male_vs_female_face",
            Task::NaturalVsArtificialObject => "natural_vs_artificial_object",
        }
    }

    /// Row label used in comparison tables.
    pub fn title(self) -> &'static str {
        match self {
            Task::FaceVsObject => "Face vs. Object",
            Task::MaleVsFemaleFace => "Male vs. Female Face",
            Task::NaturalVsArtificialObject => "Natural vs. Artificial Object",
        }
    }

    /// Class 1 is the first-named category of the task, class 0 the second.
    pub fn label(self, stimulus: Stimulus) -> Option<u8> {
        use Stimulus::*;
        match (self, stimulus) {
            (Task::FaceVsObject, MaleFace | FemaleFace) => Some(1),
            (Task::FaceVsObject, NaturalObject | ArtificialObject) => Some(0),
            (Task::MaleVsFemaleFace, MaleFace) => Some(1),
            (Task::MaleVsFemaleFace, FemaleFace) => Some(0),
            (Task::NaturalVsArtificialObject, NaturalObject) => Some(1),
            (Task::NaturalVsArtificialObject, ArtificialObject) => Some(0),
            _ => None,
        }
    }

    /// Stimulus → label pairs covering exactly the task's stimuli.
    pub fn mapping(self) -> BTreeMap<Stimulus, u8> {
        Stimulus::ALL
            .into_iter()
            .filter_map(|s| self.label(s).map(|l| (s, l)))
            .collect()
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown task `{s}`")))
    }
}

/// Keeps the records relevant to `task` and sets their labels.
pub fn apply_task(records: &[VolumeRecord], task: Task) -> Vec<VolumeRecord> {
    records
        .iter()
        .filter_map(|r| {
            task.label(r.stimulus).map(|label| VolumeRecord {
                label: Some(label),
                ..r.clone()
            })
        })
        .collect()
}

fn label_of(r: &VolumeRecord) -> Result<u8> {
    r.label.ok_or_else(|| Error::Unlabeled(r.id.clone()))
}

/// Replaces each (subject, stimulus) group by the voxelwise means of
/// consecutive runs of `k` shuffled members; leftovers are dropped.
///
/// Groups are emitted in order of first appearance. `k = 1` returns the
/// input unchanged.
pub fn kfold_average(records: &[VolumeRecord], k: usize, rng: &mut Rng) -> Result<Vec<VolumeRecord>> {
    if k == 0 {
        return Err(Error::InvalidConfig("averaging factor k must be at least 1".into()));
    }
    if k == 1 {
        return Ok(records.to_vec());
    }
    let mut order: Vec<(&str, Stimulus)> = Vec::new();
    let mut groups: HashMap<(&str, Stimulus), Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = (r.subject.as_str(), r.stimulus);
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(i);
    }

    let mut out = Vec::new();
    for key in order {
        let mut members = groups.remove(&key).expect("grouped");
        rng.shuffle(&mut members);
        for (g, chunk) in members.chunks_exact(k).enumerate() {
            let first = &records[chunk[0]];
            let shape = first.volume.shape().to_vec();
            let mut acc = vec![0.0f64; first.volume.len()];
            for &i in chunk {
                let v = &records[i].volume;
                if v.shape() != shape.as_slice() {
                    return Err(Error::shape("kfold_average", &shape, v.shape()));
                }
                for (a, &x) in acc.iter_mut().zip(v.data()) {
                    *a += x as f64;
                }
            }
            let data = acc.into_iter().map(|a| (a / k as f64) as f32).collect();
            out.push(VolumeRecord {
                id: format!("{}-{}-avg{k}-{g:03}", key.0, key.1),
                volume: Tensor::from_vec(&shape, data)?,
                label: first.label,
                subject: first.subject.clone(),
                stimulus: first.stimulus,
                averaged_from: k * first.averaged_from,
            });
        }
    }
    Ok(out)
}

/// Per-class record counts `[class 0, class 1]` under `task`.
pub fn class_counts(records: &[VolumeRecord], task: Task) -> [usize; 2] {
    let mut counts = [0; 2];
    for r in records {
        if let Some(l) = task.label(r.stimulus) {
            counts[l as usize] += 1;
        }
    }
    counts
}

/// Randomly subsamples the majority class down to the minority count.
/// Surviving records keep their input order.
pub fn equalize(records: &[VolumeRecord], task: Task, rng: &mut Rng) -> Result<Vec<VolumeRecord>> {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, r) in records.iter().enumerate() {
        let l = task.label(r.stimulus).ok_or_else(|| Error::Unlabeled(r.id.clone()))?;
        by_class[l as usize].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::EmptyClass(c as u8));
        }
    }
    let keep = by_class[0].len().min(by_class[1].len());
    let mut kept: Vec<usize> = Vec::with_capacity(2 * keep);
    for mut members in by_class {
        if members.len() > keep {
            rng.shuffle(&mut members);
            members.truncate(keep);
        }
        kept.extend(members);
    }
    kept.sort_unstable();
    Ok(kept.into_iter().map(|i| records[i].clone()).collect())
}

/// Partitions records into (train, test) by subject membership.
pub fn subject_holdout_split(
    records: &[VolumeRecord],
    holdout: &BTreeSet<String>,
) -> Result<(Vec<VolumeRecord>, Vec<VolumeRecord>)> {
    let known: BTreeSet<&str> = records.iter().map(|r| r.subject.as_str()).collect();
    if let Some(s) = holdout.iter().find(|s| !known.contains(s.as_str())) {
        return Err(Error::UnknownSubject(s.clone()));
    }
    Ok(records.iter().cloned().partition(|r| !holdout.contains(&r.subject)))
}

/// Sorted distinct subjects in `records`.
pub fn subjects(records: &[VolumeRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| r.subject.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Draws `n` holdout subjects uniformly from the sorted subject list.
pub fn choose_holdout(records: &[VolumeRecord], n: usize, rng: &mut Rng) -> Result<BTreeSet<String>> {
    let mut all = subjects(records);
    if n >= all.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot hold out {n} of {} subjects and still train",
            all.len()
        )));
    }
    rng.shuffle(&mut all);
    Ok(all.into_iter().take(n).collect())
}

/// Cross-validation fold assignment for a training pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub seed: u64,
    /// Record ids in pool order.
    pub ids: Vec<String>,
    /// Fold index of each record, aligned with `ids`.
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    /// Pool positions whose fold is `fold` (the validation set of run `fold`).
    pub fn validation_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    /// Pool positions used for training in run `fold`.
    pub fn training_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Checks that the plan was made for exactly this pool, in this order.
    pub fn check_pool(&self, pool: &[VolumeRecord]) -> Result<()> {
        let matches = self.ids.len() == pool.len() && self.ids.iter().zip(pool).all(|(id, r)| *id == r.id);
        if !matches || self.assignments.len() != self.ids.len() || self.assignments.iter().any(|&a| a >= self.n_folds) {
            return Err(Error::InvalidConfig("fold plan does not match the training pool".into()));
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Stratified fold plan: each class is shuffled separately, the class lists
/// are concatenated, and position `p` of the result goes to fold
/// `p mod n_folds`. Fold sizes, and per-fold class counts, differ by at most
/// one.
pub fn make_fold_plan(pool: &[VolumeRecord], n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::InvalidConfig("cross-validation needs at least 2 folds".into()));
    }
    if pool.len() < n_folds {
        return Err(Error::TooFewSamples {
            needed: n_folds,
            got: pool.len(),
        });
    }
    let mut rng = Rng::new(seed);
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, r) in pool.iter().enumerate() {
        by_class[label_of(r)? as usize].push(i);
    }
    let mut assignments = vec![0; pool.len()];
    let mut p = 0;
    for mut members in by_class {
        rng.shuffle(&mut members);
        for i in members {
            assignments[i] = p % n_folds;
            p += 1;
        }
    }
    Ok(FoldPlan {
        n_folds,
        seed,
        ids: pool.iter().map(|r| r.id.clone()).collect(),
        assignments,
    })
}

/// Whether averaging runs before or after equalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrepOrder {
    #[default]
    AverageThenEqualize,
    EqualizeThenAverage,
}

impl FromStr for PrepOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average_then_equalize" => Ok(PrepOrder::AverageThenEqualize),
            "equalize_then_average" => Ok(PrepOrder::EqualizeThenAverage),
            _ => Err(Error::InvalidConfig(format!("unknown preprocessing order `{s}`"))),
        }
    }
}

/// Labels for `task`, then averages and/or equalizes in the given order.
pub fn preprocess(
    records: &[VolumeRecord],
    task: Task,
    avg_k: usize,
    equalize_classes: bool,
    order: PrepOrder,
    rng: &mut Rng,
) -> Result<Vec<VolumeRecord>> {
    let labeled = apply_task(records, task);
    let mut avg_rng = rng.derive(1);
    let mut eq_rng = rng.derive(2);
    let eq = |r: Vec<VolumeRecord>, rng: &mut Rng| if equalize_classes { equalize(&r, task, rng) } else { Ok(r) };
    match order {
        PrepOrder::AverageThenEqualize => eq(kfold_average(&labeled, avg_k, &mut avg_rng)?, &mut eq_rng),
        PrepOrder::EqualizeThenAverage => kfold_average(&eq(labeled, &mut eq_rng)?, avg_k, &mut avg_rng),
    }
}
