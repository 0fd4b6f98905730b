//! `offense-pipeline`: preprocess, MLM further pre-training, fine-tuning
//! (single or k-fold), ensembling, evaluation and reporting.
//!
//! Exit codes: 0 success, 2 usage or data error, 1 internal error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use offense_core::ensemble::TieRule;
use offense_core::Task;

use crate::config::{ModeSetting, RunConfig, SystemEntry};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<offense_core::Error> for CliError {
    fn from(e: offense_core::Error) -> Self {
        CliError {
            code: if e.is_data_error() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "offense-pipeline", version, about = "Offensive-language detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration (for example a previous run's resolved_config.toml).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Global seed; every stage seed is derived from it.
    #[arg(long, env = "OFFENSE_PIPELINE_SEED")]
    seed: Option<u64>,
    /// Sub-task: A, B or C.
    #[arg(long)]
    task: Option<Task>,
    /// Registry model name.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize, deduplicate and sample the weakly labeled corpus.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Weak-label corpus file(s): id, text, average, std.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Continue masked-language-model training on an in-domain corpus.
    PretrainMlm {
        #[command(flatten)]
        common: Common,
        /// One text per line.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Start from this checkpoint instead of the registry model.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lr_scale: Option<f64>,
        #[arg(long)]
        mask_rate: Option<f64>,
    },
    /// Fine-tune a classifier, optionally as k-fold cross-validation.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// OLID training TSV.
        #[arg(long)]
        train: Option<PathBuf>,
        /// OLID validation TSV; by default a share of the training data.
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Test TSV (id, tweet) to predict.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Start from this checkpoint (e.g. an MLM-adapted model).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Number of folds; 0 disables cross-validation.
        #[arg(long)]
        cv: Option<usize>,
        #[arg(long)]
        stratified: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lr_scale: Option<f64>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        valid_fraction: Option<f64>,
    },
    /// Combine prediction files by hard or soft voting.
    Ensemble {
        #[command(flatten)]
        common: Common,
        #[arg(long = "predictions", num_args = 1..)]
        predictions: Vec<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeSetting>,
        #[arg(long, value_parser = parse_tie_rule)]
        tie_rule: Option<TieRule>,
    },
    /// Score one prediction file against gold labels.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// OLID TSV or `id,label` CSV.
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        texts: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        error_samples: Option<usize>,
    },
    /// Comparison table of several systems plus constant baselines.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gold: Option<PathBuf>,
        /// `name=path` of a prediction file; repeatable.
        #[arg(long = "system", value_parser = parse_system)]
        systems: Vec<SystemEntry>,
        #[arg(long)]
        no_baselines: bool,
    },
}

fn parse_tie_rule(s: &str) -> Result<TieRule, String> {
    match s {
        "soft_fallback" | "soft-fallback" => Ok(TieRule::SoftFallback),
        "canonical_order" | "canonical-order" => Ok(TieRule::CanonicalOrder),
        _ => Err(format!("unknown tie rule `{s}` (soft_fallback, canonical_order)")),
    }
}

fn parse_system(s: &str) -> Result<SystemEntry, String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected name=path, got `{s}`"))?;
    Ok(SystemEntry {
        name: name.to_string(),
        predictions: PathBuf::from(path),
    })
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn base_config(common: &Common, cv: Option<usize>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref(), common.model.as_deref(), cv)?;
    set(&mut cfg.output_dir, common.output_dir.clone());
    set(&mut cfg.global_seed, common.seed);
    set(&mut cfg.task, common.task);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Preprocess {
            common,
            inputs,
            fraction,
        } => {
            let mut cfg = base_config(&common, None)?;
            if !inputs.is_empty() {
                cfg.data.weak_corpus = inputs;
            }
            set(&mut cfg.preprocess.fraction, fraction);
            commands::preprocess(cfg)
        }
        Command::PretrainMlm {
            common,
            corpus,
            base,
            epochs,
            batch_size,
            lr,
            lr_scale,
            mask_rate,
        } => {
            let mut cfg = base_config(&common, None)?;
            set(&mut cfg.data.mlm_corpus, corpus);
            set(&mut cfg.data.base_checkpoint, base);
            set(&mut cfg.mlm.epochs, epochs);
            set(&mut cfg.mlm.batch_size, batch_size);
            set(&mut cfg.mlm.learning_rate, lr);
            set(&mut cfg.mlm.lr_scale, lr_scale);
            set(&mut cfg.mlm.mask_rate, mask_rate);
            commands::pretrain_mlm(cfg)
        }
        Command::Finetune {
            common,
            train,
            valid,
            test,
            init,
            cv,
            stratified,
            epochs,
            batch_size,
            lr,
            lr_scale,
            max_len,
            valid_fraction,
        } => {
            let mut cfg = base_config(&common, cv)?;
            set(&mut cfg.data.olid_train, train);
            set(&mut cfg.data.olid_valid, valid);
            set(&mut cfg.data.olid_test, test);
            set(&mut cfg.data.init_checkpoint, init);
            cfg.cv.stratified |= stratified;
            set(&mut cfg.finetune.epochs, epochs);
            set(&mut cfg.finetune.batch_size, batch_size);
            set(&mut cfg.finetune.learning_rate, lr);
            set(&mut cfg.finetune.lr_scale, lr_scale);
            set(&mut cfg.finetune.max_len, max_len);
            set(&mut cfg.data.valid_fraction, valid_fraction);
            commands::finetune(cfg)
        }
        Command::Ensemble {
            common,
            predictions,
            mode,
            tie_rule,
        } => {
            let mut cfg = base_config(&common, None)?;
            if !predictions.is_empty() {
                cfg.ensemble.predictions = predictions;
            }
            set(&mut cfg.ensemble.mode, mode);
            set(&mut cfg.ensemble.tie_rule, tie_rule);
            commands::ensemble(cfg)
        }
        Command::Evaluate {
            common,
            gold,
            texts,
            predictions,
            name,
            error_samples,
        } => {
            let mut cfg = base_config(&common, None)?;
            set(&mut cfg.evaluate.gold, gold);
            set(&mut cfg.evaluate.texts, texts);
            set(&mut cfg.evaluate.predictions, predictions);
            set(&mut cfg.evaluate.name, name);
            set(&mut cfg.evaluate.error_samples, error_samples);
            commands::evaluate(cfg)
        }
        Command::Report {
            common,
            gold,
            systems,
            no_baselines,
        } => {
            let mut cfg = base_config(&common, None)?;
            set(&mut cfg.report.gold, gold);
            if !systems.is_empty() {
                cfg.report.systems = systems;
            }
            if no_baselines {
                cfg.report.baselines = false;
            }
            commands::report(cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
