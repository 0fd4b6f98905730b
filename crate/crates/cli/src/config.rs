//! Run configuration: built-in defaults, overlaid by a TOML file, the
//! `OFFENSE_PIPELINE_SEED` environment variable and finally command-line
//! flags. The resolved result is written next to every run's outputs and can
//! be fed back through `--config` to replay the stage.

use std::fs;
use std::path::{Path, PathBuf};

use offense_core::encoder::TINY_REFERENCE;
use offense_core::ensemble::TieRule;
use offense_core::finetune::FineTuneConfig;
use offense_core::mlm::MlmTrainConfig;
use offense_core::seed::derive_seed;
use offense_core::Task;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

/// Learning-rate multiplier applied to the reference encoder.
const TINY_LR_SCALE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub global_seed: u64,
    pub task: Task,
    pub model: String,
    pub output_dir: PathBuf,
    /// Derived from `global_seed`; values read from a file are recomputed.
    pub seeds: StageSeeds,
    pub data: DataConfig,
    pub preprocess: PreprocessSettings,
    pub mlm: MlmTrainConfig,
    pub finetune: FineTuneConfig,
    pub cv: CvSettings,
    pub ensemble: EnsembleSettings,
    pub evaluate: EvaluateSettings,
    pub report: ReportSettings,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSeeds {
    pub sample: u64,
    pub init: u64,
    pub valid_split: u64,
    pub mlm: u64,
    pub finetune: u64,
}

impl StageSeeds {
    fn derive(global: u64) -> Self {
        // TOML integers are signed 64-bit.
        let tagged = |tag| derive_seed(global, tag) >> 1;
        StageSeeds {
            sample: tagged("sample"),
            init: tagged("init"),
            valid_split: tagged("valid-split"),
            mlm: tagged("mlm"),
            finetune: tagged("finetune"),
        }
    }
}

/// Input paths; an empty path means "not given".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub weak_corpus: Vec<PathBuf>,
    pub mlm_corpus: PathBuf,
    pub base_checkpoint: PathBuf,
    pub olid_train: PathBuf,
    pub olid_valid: PathBuf,
    pub olid_test: PathBuf,
    pub init_checkpoint: PathBuf,
    /// Share of `olid_train` held out for epoch selection when no
    /// `olid_valid` is given.
    pub valid_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSettings {
    pub fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvSettings {
    /// 0 runs a single fine-tuning job.
    pub folds: usize,
    pub stratified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeSetting {
    /// Soft for two members, hard otherwise.
    Auto,
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSettings {
    pub mode: ModeSetting,
    pub tie_rule: TieRule,
    pub predictions: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSettings {
    pub gold: PathBuf,
    /// Optional `id \t tweet` file used to show texts of misclassified rows
    /// when `gold` holds labels only.
    pub texts: PathBuf,
    pub predictions: PathBuf,
    pub name: String,
    pub error_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemEntry {
    pub name: String,
    pub predictions: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSettings {
    pub gold: PathBuf,
    pub systems: Vec<SystemEntry>,
    pub baselines: bool,
}

impl RunConfig {
    pub fn defaults(model: &str, cv_folds: usize) -> Self {
        let lr_scale = if model == TINY_REFERENCE { TINY_LR_SCALE } else { 1.0 };
        let finetune = if cv_folds >= 2 {
            FineTuneConfig::cross_validation()
        } else {
            FineTuneConfig::default()
        };
        RunConfig {
            global_seed: 0,
            task: Task::A,
            model: model.to_string(),
            output_dir: PathBuf::from("output"),
            seeds: StageSeeds::default(),
            data: DataConfig {
                valid_fraction: 0.1,
                ..DataConfig::default()
            },
            preprocess: PreprocessSettings { fraction: 0.05 },
            mlm: MlmTrainConfig {
                lr_scale,
                ..MlmTrainConfig::default()
            },
            finetune: FineTuneConfig { lr_scale, ..finetune },
            cv: CvSettings {
                folds: cv_folds,
                stratified: false,
            },
            ensemble: EnsembleSettings {
                mode: ModeSetting::Auto,
                tie_rule: TieRule::SoftFallback,
                predictions: Vec::new(),
            },
            evaluate: EvaluateSettings {
                gold: PathBuf::new(),
                texts: PathBuf::new(),
                predictions: PathBuf::new(),
                name: "system".into(),
                error_samples: offense_core::evaluate::DEFAULT_ERROR_SAMPLES,
            },
            report: ReportSettings {
                gold: PathBuf::new(),
                systems: Vec::new(),
                baselines: true,
            },
        }
    }

    /// Defaults overlaid with `file` (if any). `model` and `cv_folds`
    /// overrides are needed up front because some defaults depend on them.
    pub fn load(file: Option<&Path>, model: Option<&str>, cv_folds: Option<usize>) -> Result<Self, CliError> {
        let overlay = match file {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        let model = model
            .map(str::to_string)
            .or_else(|| overlay.get("model").and_then(|v| v.as_str()).map(str::to_string))
            .unwrap_or_else(|| TINY_REFERENCE.to_string());
        let folds = cv_folds
            .or_else(|| {
                overlay
                    .get("cv")
                    .and_then(|c| c.get("folds"))
                    .and_then(|v| v.as_integer())
                    .and_then(|v| usize::try_from(v).ok())
            })
            .unwrap_or(0);
        let mut base = toml::Table::try_from(Self::defaults(&model, folds))
            .map_err(|e| CliError::internal(format!("cannot encode defaults: {e}")))?;
        merge(&mut base, overlay);
        let mut config: RunConfig = toml::Value::Table(base)
            .try_into()
            .map_err(|e| CliError::usage(format!("invalid config: {e}")))?;
        config.model = model;
        config.cv.folds = folds;
        Ok(config)
    }

    /// Fan the global seed out to every stage and check ranges.
    pub fn resolve(&mut self) -> Result<(), CliError> {
        if self.global_seed > i64::MAX as u64 {
            return Err(CliError::usage(format!("global_seed must be at most {}", i64::MAX)));
        }
        self.seeds = StageSeeds::derive(self.global_seed);
        self.mlm.seed = self.seeds.mlm;
        self.finetune.seed = self.seeds.finetune;
        if !(self.preprocess.fraction > 0.0 && self.preprocess.fraction <= 1.0) {
            return Err(CliError::usage("preprocess.fraction must be in (0, 1]"));
        }
        if !(self.data.valid_fraction > 0.0 && self.data.valid_fraction < 1.0) {
            return Err(CliError::usage("data.valid_fraction must be in (0, 1)"));
        }
        if self.cv.folds == 1 {
            return Err(CliError::usage("cv.folds must be 0 (off) or at least 2"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::internal(format!("cannot encode config: {e}")))
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// `None` for the empty path.
pub fn given(path: &Path) -> Option<&Path> {
    (!path.as_os_str().is_empty()).then_some(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let mut c = RunConfig::defaults(TINY_REFERENCE, 0);
        c.resolve().unwrap();
        let text = c.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn published_defaults() {
        let c = RunConfig::defaults("roberta-large", 0);
        assert_eq!((c.mlm.epochs, c.mlm.batch_size, c.mlm.learning_rate, c.mlm.lr_scale), (1, 4, 2e-5, 1.0));
        assert_eq!((c.finetune.epochs, c.finetune.learning_rate, c.finetune.max_len, c.finetune.batch_size), (6, 5e-6, 128, 4));
        assert_eq!(RunConfig::defaults("roberta-large", 10).finetune.batch_size, 8);
        assert_eq!(RunConfig::defaults(TINY_REFERENCE, 0).finetune.lr_scale, 100.0);
    }

    #[test]
    fn file_overlays_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "global_seed = 9\n[finetune]\nepochs = 2\n[cv]\nfolds = 5\n").unwrap();
        let c = RunConfig::load(Some(&path), None, None).unwrap();
        assert_eq!((c.global_seed, c.finetune.epochs, c.finetune.batch_size, c.cv.folds), (9, 2, 8, 5));
        assert_eq!(c.finetune.learning_rate, 5e-6);
        let c = RunConfig::load(Some(&path), None, Some(0)).unwrap();
        assert_eq!(c.finetune.batch_size, 4);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "glob_seed = 9\n").unwrap();
        let err = RunConfig::load(Some(&path), None, None).unwrap_err();
        assert_eq!(err.code, 2);
    }

    #[test]
    fn seeds_are_stage_tagged() {
        let mut a = RunConfig::defaults(TINY_REFERENCE, 0);
        a.resolve().unwrap();
        let s = a.seeds;
        assert!(s.sample != s.init && s.mlm != s.finetune);
        assert_eq!(a.finetune.seed, s.finetune);
        let mut b = a.clone();
        b.global_seed = 1;
        b.resolve().unwrap();
        assert_ne!(a.seeds, b.seeds);
    }
}
