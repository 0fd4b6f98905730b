//! One function per subcommand. Every stage writes `resolved_config.toml`
//! before doing any work and appends timestamped lines to `run.log`; all
//! other outputs are deterministic.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use offense_core::corpus::{
    load_olid, load_texts, load_weak_corpus, preprocess as run_preprocess, read_lines, write_lines, LabeledExample,
};
use offense_core::encoder::{build_named, load_checkpoint, save_checkpoint, ModelRegistry};
use offense_core::ensemble::{default_mode, EnsembleSpec, VoteMode};
use offense_core::evaluate::{
    baseline_predict, build_report, render_confusion_figure, render_table, BaselineStrategy, EvalReport,
};
use offense_core::finetune::{
    cross_validated_predict, epoch_metrics_csv, fine_tune, predict, BaseModel, CvConfig,
};
use offense_core::prediction::{read_labels, write_csv, PredictionRow, PredictionSet};
use offense_core::synthetic::holdout_split;
use offense_core::{Encoder, Task};
use serde_json::json;

use crate::config::{given, ModeSetting, RunConfig, RESOLVED_CONFIG};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

struct Run {
    cfg: RunConfig,
    log: PathBuf,
}

impl Run {
    fn start(mut cfg: RunConfig, stage: &str) -> Result<Run> {
        cfg.resolve()?;
        fs::create_dir_all(&cfg.output_dir)
            .map_err(|e| CliError::usage(format!("cannot create {}: {e}", cfg.output_dir.display())))?;
        let run = Run {
            log: cfg.output_dir.join("run.log"),
            cfg,
        };
        run.write(RESOLVED_CONFIG, &run.cfg.to_toml()?)?;
        run.log(&format!("{stage} started (global_seed {})", run.cfg.global_seed))?;
        Ok(run)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn write(&self, name: &str, content: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, content).map_err(|e| CliError::internal(format!("cannot write {}: {e}", path.display())))
    }

    fn log(&self, message: &str) -> Result<()> {
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.log)
            .and_then(|mut f| writeln!(f, "[{ts}] {message}"))
            .map_err(|e| CliError::internal(format!("cannot write {}: {e}", self.log.display())))
    }

    fn finish(&self, stage: &str) -> Result<()> {
        self.log(&format!("{stage} finished"))
    }
}

fn required<'a>(path: &'a Path, what: &str, flag: &str) -> Result<&'a Path> {
    let path = given(path).ok_or_else(|| CliError::usage(format!("no {what} given (use {flag} or the config file)")))?;
    if !path.exists() {
        return Err(CliError::usage(format!("{what} not found: {}", path.display())));
    }
    Ok(path)
}

fn optional<'a>(path: &'a Path, what: &str) -> Result<Option<&'a Path>> {
    match given(path) {
        Some(p) if !p.exists() => Err(CliError::usage(format!("{what} not found: {}", p.display()))),
        other => Ok(other),
    }
}

fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json value serializes");
    s.push('\n');
    s
}

fn base_model(cfg: &RunConfig, init: Option<&Path>) -> Result<Encoder> {
    Ok(match init {
        Some(path) => load_checkpoint(path)?,
        None => build_named(&cfg.model, cfg.seeds.init)?,
    })
}

pub fn preprocess(cfg: RunConfig) -> Result<()> {
    let run = Run::start(cfg, "preprocess")?;
    let cfg = &run.cfg;
    if cfg.data.weak_corpus.is_empty() {
        return Err(CliError::usage("no input corpus given (use --input or data.weak_corpus)"));
    }
    let mut records = Vec::new();
    for path in &cfg.data.weak_corpus {
        records.extend(load_weak_corpus(required(path, "input corpus", "--input")?)?);
    }
    let (sample, stats) = run_preprocess(records, cfg.preprocess.fraction, cfg.seeds.sample)?;
    write_lines(run.path("corpus.txt"), sample.iter().map(|r| r.text.as_str()))?;
    run.write("stats.json", &pretty(&serde_json::to_value(&stats).expect("stats serialize")))?;
    run.log(&format!(
        "{} input, {} non-empty, {} after dedup, {} sampled",
        stats.input, stats.non_empty, stats.deduplicated, stats.sampled
    ))?;
    run.finish("preprocess")
}

pub fn pretrain_mlm(cfg: RunConfig) -> Result<()> {
    let run = Run::start(cfg, "pretrain-mlm")?;
    let cfg = &run.cfg;
    let corpus: Vec<String> = read_lines(required(&cfg.data.mlm_corpus, "MLM corpus", "--corpus")?)?
        .into_iter()
        .filter(|l| !l.trim().is_empty())
        .collect();
    let model = base_model(cfg, optional(&cfg.data.base_checkpoint, "base checkpoint")?)?;
    let (adapted, curve) = offense_core::mlm::further_pretrain(&model, &corpus, &cfg.mlm)?;
    save_checkpoint(&adapted, run.path("model.ckpt"))?;
    let mut csv = String::from("step,loss\n");
    for (i, loss) in curve.iter().enumerate() {
        csv.push_str(&format!("{i},{loss}\n"));
    }
    run.write("mlm_loss.csv", &csv)?;
    run.log(&format!("{} steps on {} lines", curve.len(), corpus.len()))?;
    run.finish("pretrain-mlm")
}

pub fn finetune(cfg: RunConfig) -> Result<()> {
    let run = Run::start(cfg, "finetune")?;
    let cfg = &run.cfg;
    let task = cfg.task;
    let train = load_olid(required(&cfg.data.olid_train, "training data", "--train")?, task)?;
    let test = optional(&cfg.data.olid_test, "test data")?.map(load_texts).transpose()?;
    let init = optional(&cfg.data.init_checkpoint, "init checkpoint")?;

    if cfg.cv.folds >= 2 {
        let test = test.ok_or_else(|| CliError::usage("cross-validation needs test data (use --test)"))?;
        let cv = CvConfig {
            k: cfg.cv.folds,
            stratified: cfg.cv.stratified,
            finetune: cfg.finetune.clone(),
        };
        let pretrained = init.map(load_checkpoint::<f32>).transpose()?;
        let registry_cfg;
        let base = match &pretrained {
            Some(m) => BaseModel::Pretrained(m),
            None => {
                registry_cfg = ModelRegistry::standard().get(&cfg.model)?;
                BaseModel::Config(&registry_cfg)
            }
        };
        let result = cross_validated_predict(&train, &test, task, &cv, base)?;
        for (fold, (preds, summary)) in result.predictions.iter().zip(&result.summaries).enumerate() {
            preds.write_csv(run.path(&format!("predictions_fold_{fold:02}.csv")))?;
            run.write(&format!("epoch_metrics_fold_{fold:02}.csv"), &epoch_metrics_csv(&summary.epoch_metrics))?;
        }
        write_csv(
            &run.path("folds.csv"),
            Some(vec!["id".into(), "fold".into()]),
            train.iter().map(|e| vec![e.id.clone(), result.folds.fold_of[&e.id].to_string()]),
        )?;
        run.write("cv_summary.json", &pretty(&json!({ "k": cv.k, "folds": result.summaries })))?;
        run.log(&format!("{} folds over {} examples", cv.k, train.len()))?;
        return run.finish("finetune");
    }

    let (train, valid) = match optional(&cfg.data.olid_valid, "validation data")? {
        Some(path) => (train, load_olid(path, task)?),
        None => holdout_split(&train, cfg.data.valid_fraction, cfg.seeds.valid_split),
    };
    let model = base_model(cfg, init)?;
    let result = fine_tune(&model, &train, &valid, task, &cfg.finetune)?;
    save_checkpoint(&result.best_model, run.path("best.ckpt"))?;
    run.write("epoch_metrics.csv", &epoch_metrics_csv(&result.epoch_metrics))?;
    let preds = match &test {
        Some(test) => predict(&result.best_model, test, task, cfg.finetune.max_len)?,
        None => predict(&result.best_model, &valid, task, cfg.finetune.max_len)?,
    };
    preds.write_csv(run.path("predictions.csv"))?;
    run.write(
        "summary.json",
        &pretty(&json!({
            "train_size": train.len(),
            "valid_size": valid.len(),
            "best_epoch": result.best_epoch,
            "best": result.best_metrics(),
            "predicted": if test.is_some() { "test" } else { "validation" },
        })),
    )?;
    run.log(&format!("best epoch {}", result.best_epoch))?;
    run.finish("finetune")
}

pub fn ensemble(cfg: RunConfig) -> Result<()> {
    let run = Run::start(cfg, "ensemble")?;
    let cfg = &run.cfg;
    let paths = &cfg.ensemble.predictions;
    if paths.len() < 2 {
        return Err(CliError::usage(format!(
            "an ensemble needs at least 2 prediction files, got {}",
            paths.len()
        )));
    }
    let sets = paths
        .iter()
        .map(|p| Ok(PredictionSet::read_csv(required(p, "prediction file", "--predictions")?, cfg.task)?))
        .collect::<Result<Vec<_>>>()?;
    let mode = match cfg.ensemble.mode {
        ModeSetting::Auto => default_mode(sets.len()),
        ModeSetting::Hard => VoteMode::Hard,
        ModeSetting::Soft => VoteMode::Soft,
    };
    let result = EnsembleSpec::new(&sets, mode, cfg.ensemble.tie_rule)?.run()?;
    result.write_csv(run.path("ensemble.csv"))?;
    result.write_submission(run.path("submission.csv"))?;
    let ties = result.rows.iter().filter(|r| r.tie_flag).count();
    run.write(
        "ensemble.json",
        &pretty(&json!({ "spec": result.spec_digest, "rows": result.rows.len(), "ties": ties })),
    )?;
    run.log(&format!("{}: {} rows, {ties} ties", result.spec_digest, result.rows.len()))?;
    run.finish("ensemble")
}

/// OLID TSV (tab-separated, with tweets) or a `id,label` CSV whose texts
/// may come from a separate `id \t tweet` file.
fn load_gold(path: &Path, texts: Option<&Path>, task: Task) -> Result<Vec<LabeledExample>> {
    let first = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?
        .lines()
        .next()
        .unwrap_or_default()
        .to_string();
    if first.contains('\t') {
        return Ok(load_olid(path, task)?);
    }
    let texts: HashMap<String, String> = match texts {
        Some(p) => load_texts(p)?.into_iter().map(|r| (r.id, r.text)).collect(),
        None => HashMap::new(),
    };
    Ok(read_labels(path, task)?
        .into_iter()
        .map(|(id, label)| {
            let text = texts.get(&id).cloned().unwrap_or_default();
            LabeledExample { id, text, label }
        })
        .collect())
}

fn label_only(name: &str, path: &Path, task: Task) -> Result<PredictionSet> {
    Ok(PredictionSet {
        model_name: name.to_string(),
        task,
        rows: read_labels(path, task)?
            .into_iter()
            .map(|(id, label)| PredictionRow { id, label, probs: None })
            .collect(),
    })
}

pub fn evaluate(cfg: RunConfig) -> Result<()> {
    let run = Run::start(cfg, "evaluate")?;
    let cfg = &run.cfg;
    let s = &cfg.evaluate;
    let gold = load_gold(
        required(&s.gold, "gold file", "--gold")?,
        optional(&s.texts, "texts file")?,
        cfg.task,
    )?;
    let preds = label_only(&s.name, required(&s.predictions, "prediction file", "--predictions")?, cfg.task)?;
    let report = build_report(&gold, &preds, cfg.task, s.error_samples)?;
    run.write("report.txt", &report.render_named(&s.name))?;
    run.write("report.json", &format!("{}\n", report.to_json()))?;
    render_confusion_figure(&report.matrix, run.path("confusion.svg"))?;
    run.log(&format!("macro F1 {:.2}, accuracy {:.2}", report.macro_f1, report.accuracy))?;
    run.finish("evaluate")
}

pub fn report(cfg: RunConfig) -> Result<()> {
    let run = Run::start(cfg, "report")?;
    let cfg = &run.cfg;
    let task = cfg.task;
    let gold = load_gold(required(&cfg.report.gold, "gold file", "--gold")?, None, task)?;
    if cfg.report.systems.is_empty() && !cfg.report.baselines {
        return Err(CliError::usage("nothing to report: no systems and baselines disabled"));
    }
    let mut rows: Vec<(String, EvalReport)> = Vec::new();
    if cfg.report.baselines {
        let strategies: &[(&str, BaselineStrategy)] = match task {
            Task::A => &[("All NOT", BaselineStrategy::AllNot), ("All OFF", BaselineStrategy::AllOff)],
            _ => &[("Majority", BaselineStrategy::MajorityClass)],
        };
        for (name, strategy) in strategies {
            let preds = baseline_predict(*strategy, &gold, task)?;
            rows.push((name.to_string(), build_report(&gold, &preds, task, 0)?));
        }
    }
    for system in &cfg.report.systems {
        let path = required(&system.predictions, "prediction file", "--system")?;
        let preds = label_only(&system.name, path, task)?;
        rows.push((system.name.clone(), build_report(&gold, &preds, task, 0)?));
    }
    let table: Vec<(&str, &EvalReport)> = rows.iter().map(|(n, r)| (n.as_str(), r)).collect();
    run.write("table.txt", &render_table(&table))?;
    let json_rows: Vec<_> = rows.iter().map(|(n, r)| json!({ "name": n, "report": r })).collect();
    run.write("table.json", &pretty(&json!(json_rows)))?;
    run.log(&format!("{} rows", rows.len()))?;
    run.finish("report")
}
