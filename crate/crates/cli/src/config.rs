//! Run configuration: built-in defaults, overridden by a TOML file,
//! overridden by command-line flags.

use std::path::{Path, PathBuf};

use mp3dcnn::model::{CombinePolicy, ModelKind};
use mp3dcnn::pipeline::{PrepOrder, Task};
use mp3dcnn::trainer::{OptimizerKind, TrainConfig};
use mp3dcnn::Precision;
use serde::{Deserialize, Serialize};

use crate::args::{GenerateArgs, GradcheckArgs, PreprocessArgs, TrainArgs};
use crate::error::{CliError, CliResult};

/// File name of the effective configuration written next to outputs.
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generate: GenerateSettings,
    pub preprocess: PreprocessSettings,
    pub train: TrainSettings,
    pub gradcheck: GradcheckSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSettings {
    pub out: Option<PathBuf>,
    pub subjects: usize,
    pub per_class: usize,
    pub shape: [usize; 3],
    pub seed: u64,
    pub noise: f64,
    pub amplitude: f64,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        let s = mp3dcnn::data_io::SyntheticConfig::default();
        GenerateSettings {
            out: None,
            subjects: s.n_subjects,
            per_class: s.volumes_per_class,
            shape: s.shape,
            seed: s.seed,
            noise: s.noise_sigma,
            amplitude: s.amplitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSettings {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub task: Option<Task>,
    pub avg: usize,
    pub equalize: bool,
    pub order: PrepOrder,
    pub seed: u64,
}

impl Default for PreprocessSettings {
    fn default() -> Self {
        PreprocessSettings {
            manifest: None,
            out: None,
            task: None,
            avg: 1,
            equalize: false,
            order: PrepOrder::AverageThenEqualize,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub task: Task,
    pub model: ModelKind,
    pub folds: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub precision: Precision,
    pub combine: CombinePolicy,
    pub holdout: usize,
    pub holdout_subjects: Vec<String>,
    pub equalize: bool,
    pub seed: u64,
    pub parallel_folds: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            manifest: None,
            out: None,
            task: Task::FaceVsObject,
            model: ModelKind::Mp3dcnn,
            folds: 9,
            epochs: t.epochs,
            batch: t.batch_size,
            lr: t.learning_rate,
            optimizer: t.optimizer,
            precision: t.precision,
            combine: t.combine,
            holdout: 2,
            holdout_subjects: Vec::new(),
            equalize: true,
            seed: 0,
            parallel_folds: 1,
        }
    }
}

impl TrainSettings {
    /// Trainer hyperparameters; `seed` is the root of the per-fold seeds.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch,
            learning_rate: self.lr,
            epochs: self.epochs,
            optimizer: self.optimizer,
            seed,
            precision: self.precision,
            combine: self.combine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSettings {
    pub precision: Precision,
    pub seed: u64,
    pub batch: usize,
    pub layers_only: bool,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        GradcheckSettings {
            precision: Precision::Double,
            seed: 0,
            batch: 2,
            layers_only: false,
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config is always representable in TOML")
    }

    /// Defaults, or the contents of `path` when given.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        RunConfig::from_toml(&text).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn write_effective(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(EFFECTIVE_CONFIG);
        std::fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn apply_generate(&mut self, a: &GenerateArgs) {
        let s = &mut self.generate;
        set(&mut s.out, a.out.clone().map(Some));
        set(&mut s.subjects, a.subjects);
        set(&mut s.per_class, a.per_class);
        set(&mut s.shape, a.shape);
        set(&mut s.seed, a.seed);
        set(&mut s.noise, a.noise);
        set(&mut s.amplitude, a.amplitude);
    }

    pub fn apply_preprocess(&mut self, a: &PreprocessArgs) {
        let s = &mut self.preprocess;
        set(&mut s.manifest, a.manifest.clone().map(Some));
        set(&mut s.out, a.out.clone().map(Some));
        set(&mut s.task, a.task.map(Some));
        set(&mut s.avg, a.avg);
        s.equalize |= a.equalize;
        set(&mut s.order, a.order);
        set(&mut s.seed, a.seed);
    }

    pub fn apply_train(&mut self, a: &TrainArgs) {
        let s = &mut self.train;
        set(&mut s.manifest, a.manifest.clone().map(Some));
        set(&mut s.out, a.out.clone().map(Some));
        set(&mut s.task, a.task);
        set(&mut s.model, a.model);
        set(&mut s.folds, a.folds);
        set(&mut s.epochs, a.epochs);
        set(&mut s.batch, a.batch);
        set(&mut s.lr, a.lr);
        set(&mut s.optimizer, a.optimizer);
        set(&mut s.precision, a.precision);
        set(&mut s.combine, a.combine);
        set(&mut s.holdout, a.holdout);
        set(&mut s.holdout_subjects, a.holdout_subjects.clone());
        if a.no_equalize {
            s.equalize = false;
        }
        set(&mut s.seed, a.seed);
        set(&mut s.parallel_folds, a.parallel_folds);
    }

    pub fn apply_gradcheck(&mut self, a: &GradcheckArgs) {
        let s = &mut self.gradcheck;
        set(&mut s.precision, a.precision);
        set(&mut s.seed, a.seed);
        set(&mut s.batch, a.batch);
        s.layers_only |= a.layers_only;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn customized_round_trips() {
        let mut c = RunConfig::default();
        c.train.out = Some("runs/a".into());
        c.train.holdout_subjects = vec!["s01".into(), "s02".into()];
        c.train.lr = 1e-3;
        c.train.model = ModelKind::Baseline3dcnn;
        c.preprocess.task = Some(Task::MaleVsFemaleFace);
        c.preprocess.order = PrepOrder::EqualizeThenAverage;
        c.generate.shape = [30, 24, 26];
        c.gradcheck.precision = Precision::Single;
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::from_toml("[train]\nepochs = 3\nmodel = \"baseline_3dcnn\"\n").unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch, 64);
        assert_eq!(c.train.lr, 1e-5);
        assert_eq!(c.train.model, ModelKind::Baseline3dcnn);
        assert!(RunConfig::from_toml("[train]\nepoch = 3\n").is_err());
    }
}
