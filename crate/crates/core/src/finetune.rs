//! Supervised fine-tuning with per-epoch validation and best-epoch
//! selection, plus k-fold cross-validated prediction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ensure_disjoint, kfold_split, kfold_split_stratified, normalize_tweet, FoldAssignment, LabeledExample};
use crate::encoder::network::Group;
use crate::encoder::{build_encoder, EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::evaluate::{accuracy, confusion_matrix, macro_f1};
use crate::optim::{clip_grad_norm, Adam, AdamConfig};
use crate::prediction::PredictionSet;
use crate::scalar::Scalar;
use crate::seed::{derive_indexed, derive_seed};
use crate::task::{Task, TextItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    MacroF1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplier on `learning_rate` (100 for the tiny reference encoder).
    pub lr_scale: f64,
    pub batch_size: usize,
    pub max_len: usize,
    pub seed: u64,
    pub selection_metric: SelectionMetric,
    /// Optional global gradient-norm bound; off by default.
    pub grad_clip: Option<f64>,
    pub adam: AdamConfig,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            epochs: 6,
            learning_rate: 5e-6,
            lr_scale: 1.0,
            batch_size: 4,
            max_len: 128,
            seed: 0,
            selection_metric: SelectionMetric::MacroF1,
            grad_clip: None,
            adam: AdamConfig::default(),
        }
    }
}

impl FineTuneConfig {
    /// Defaults for cross-validation runs (batch size 8).
    pub fn cross_validation() -> Self {
        FineTuneConfig {
            batch_size: 8,
            ..Self::default()
        }
    }

    pub fn tiny_reference() -> Self {
        FineTuneConfig {
            lr_scale: 100.0,
            ..Self::default()
        }
    }

    pub fn effective_lr(&self) -> f64 {
        self.learning_rate * self.lr_scale
    }

    fn validate(&self, model_max: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        if !(self.effective_lr() >= 0.0) {
            return Err(Error::InvalidArgument("learning rate must be non-negative".into()));
        }
        if self.max_len < 3 || self.max_len > model_max {
            return Err(Error::InvalidArgument(format!(
                "max_len {} must be in [3, {model_max}] (the model's max_positions)",
                self.max_len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Fractions in [0, 1].
    pub macro_f1: f64,
    pub accuracy: f64,
    pub train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FineTuneResult<S> {
    pub best_model: EncoderModel<S>,
    /// 1-based.
    pub best_epoch: usize,
    pub epoch_metrics: Vec<EpochMetrics>,
}

impl<S> FineTuneResult<S> {
    pub fn best_metrics(&self) -> &EpochMetrics {
        &self.epoch_metrics[self.best_epoch - 1]
    }
}

/// Epoch metrics CSV: `epoch,macro_f1,accuracy,train_loss`.
pub fn epoch_metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,macro_f1,accuracy,train_loss\n");
    for m in metrics {
        out.push_str(&format!("{},{},{},{}\n", m.epoch, m.macro_f1, m.accuracy, m.train_loss));
    }
    out
}

fn encode_items<S: Scalar, T: TextItem>(model: &EncoderModel<S>, items: &[T], max_len: usize) -> Result<Vec<Vec<u32>>> {
    items
        .iter()
        .map(|it| model.tokenize(&normalize_tweet(it.text()), max_len))
        .collect()
}

fn predict_encoded<S: Scalar>(
    model: &EncoderModel<S>,
    ids: &[&str],
    encoded: &[Vec<u32>],
    task: Task,
) -> Result<PredictionSet> {
    let probs = model.classify(encoded, task)?;
    let rows = ids
        .iter()
        .zip(probs.outer_iter())
        .map(|(id, p)| (id.to_string(), p.iter().map(|v| v.as_f64()).collect()))
        .collect();
    Ok(PredictionSet::from_probabilities(model.config().name.clone(), task, rows))
}

/// Predict every item, preserving input order. Texts are normalized and
/// truncated to `max_len` tokens.
pub fn predict<S: Scalar, T: TextItem>(
    model: &EncoderModel<S>,
    items: &[T],
    task: Task,
    max_len: usize,
) -> Result<PredictionSet> {
    model.check_task(task)?;
    let encoded = encode_items(model, items, max_len)?;
    let ids: Vec<&str> = items.iter().map(TextItem::id).collect();
    predict_encoded(model, &ids, &encoded, task)
}

fn validation_scores(set: &PredictionSet, gold: &[LabeledExample], task: Task) -> Result<(f64, f64)> {
    let gold_labels: Vec<_> = gold.iter().map(|g| g.label).collect();
    let pred: Vec<_> = set.rows.iter().map(|r| r.label).collect();
    let cm = confusion_matrix(&gold_labels, &pred, task)?;
    Ok((macro_f1(&cm), accuracy(&cm)))
}

/// Fine-tune a copy of `model` for `config.epochs` epochs, validating after
/// each one and keeping the epoch with the best macro F1 (earliest on ties).
/// A classifier head of the wrong width is replaced by a fresh one seeded
/// from `config.seed`.
pub fn fine_tune<S: Scalar>(
    model: &EncoderModel<S>,
    train: &[LabeledExample],
    valid: &[LabeledExample],
    task: Task,
    config: &FineTuneConfig,
) -> Result<FineTuneResult<S>> {
    config.validate(model.config().max_positions)?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::InvalidArgument("train and validation sets must be non-empty".into()));
    }
    ensure_disjoint(train, valid)?;
    let targets: Vec<usize> = train.iter().map(|e| task.require_index(e.label)).collect::<Result<_>>()?;
    for e in valid {
        task.require_index(e.label)?;
    }

    let mut model = model.clone();
    if model.num_labels() != task.num_labels() {
        model.reset_classifier(task.num_labels(), derive_seed(config.seed, "head"));
    }
    let train_ids = encode_items(&model, train, config.max_len)?;
    let valid_ids = encode_items(&model, valid, config.max_len)?;
    let valid_names: Vec<&str> = valid.iter().map(|e| e.id.as_str()).collect();

    let ranges: Vec<_> = [Group::Encoder, Group::Classifier]
        .into_iter()
        .flat_map(|g| model.group_ranges(g))
        .collect();
    let mut adam = Adam::new(config.adam, model.num_parameters());
    let mut grad = vec![S::zero(); model.num_parameters()];
    let lr = config.effective_lr();

    let mut best: Option<(usize, f64, EncoderModel<S>)> = None;
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_indexed(config.seed, "ft-shuffle", epoch as u64)));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(Vec<u32>, usize)> = chunk.iter().map(|&i| (train_ids[i].clone(), targets[i])).collect();
            let loss = model.classification_loss(&batch, Some(&mut grad))?.as_f64();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    batch_ids: chunk.iter().map(|&i| train[i].id.clone()).collect(),
                });
            }
            if let Some(max_norm) = config.grad_clip {
                clip_grad_norm(&mut grad, &ranges, max_norm);
            }
            adam.step(&mut model.params, &grad, &ranges, lr);
            loss_sum += loss;
            batches += 1;
            step += 1;
        }
        let preds = predict_encoded(&model, &valid_names, &valid_ids, task)?;
        let (f1, acc) = validation_scores(&preds, valid, task)?;
        metrics.push(EpochMetrics {
            epoch,
            macro_f1: f1,
            accuracy: acc,
            train_loss: loss_sum / batches as f64,
        });
        if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
            best = Some((epoch, f1, model.clone()));
        }
    }
    let (best_epoch, _, best_model) = best.expect("at least one epoch");
    Ok(FineTuneResult {
        best_model,
        best_epoch,
        epoch_metrics: metrics,
    })
}

/// Where each fold's model comes from.
#[derive(Debug, Clone, Copy)]
pub enum BaseModel<'a, S> {
    /// Build a fresh model per fold, seeded with the fold index.
    Config(&'a EncoderConfig),
    /// Start every fold from this model with a freshly seeded classifier.
    Pretrained(&'a EncoderModel<S>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub k: usize,
    pub stratified: bool,
    pub finetune: FineTuneConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 10,
            stratified: false,
            finetune: FineTuneConfig::cross_validation(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_size: usize,
    pub valid_size: usize,
    pub best_epoch: usize,
    pub epoch_metrics: Vec<EpochMetrics>,
}

#[derive(Debug, Clone)]
pub struct CvRun {
    pub folds: FoldAssignment,
    /// One prediction set over the full test set per fold, in fold order.
    pub predictions: Vec<PredictionSet>,
    pub summaries: Vec<FoldSummary>,
}

/// Train one model per fold (all other folds as training data, the fold
/// itself for validation) and let each predict the whole test set. Folds
/// run in parallel; results are assembled in fold order.
pub fn cross_validated_predict<S: Scalar, T: TextItem + Sync>(
    dataset: &[LabeledExample],
    test: &[T],
    task: Task,
    config: &CvConfig,
    base: BaseModel<'_, S>,
) -> Result<CvRun> {
    let k = config.k;
    if k < 2 || dataset.len() < k {
        return Err(Error::InvalidArgument(format!(
            "cross-validation needs 2 <= k <= {} (dataset size), got k = {k}",
            dataset.len()
        )));
    }
    let split_seed = derive_seed(config.finetune.seed, "kfold");
    let folds = if config.stratified {
        kfold_split_stratified(dataset, k, split_seed)?
    } else {
        kfold_split(dataset, k, split_seed)?
    };
    let groups = folds.fold_indices(dataset);

    let results: Vec<Result<(PredictionSet, FoldSummary)>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let run = || -> Result<(PredictionSet, FoldSummary)> {
                let fold_seed = derive_indexed(config.finetune.seed, "fold", fold as u64);
                let model = match base {
                    BaseModel::Config(cfg) => build_encoder::<S>(cfg, derive_seed(fold_seed, "init"))?,
                    BaseModel::Pretrained(m) => {
                        let mut m = m.clone();
                        m.reset_classifier(task.num_labels(), derive_seed(fold_seed, "head"));
                        m
                    }
                };
                let valid: Vec<LabeledExample> = groups[fold].iter().map(|&i| dataset[i].clone()).collect();
                let train: Vec<LabeledExample> = groups
                    .iter()
                    .enumerate()
                    .filter(|&(f, _)| f != fold)
                    .flat_map(|(_, g)| g.iter().map(|&i| dataset[i].clone()))
                    .collect();
                let ft = FineTuneConfig {
                    seed: fold_seed,
                    ..config.finetune.clone()
                };
                let result = fine_tune(&model, &train, &valid, task, &ft)?;
                let mut preds = predict(&result.best_model, test, task, ft.max_len)?;
                preds.model_name = format!("{}-fold{fold}", model.config().name);
                Ok((
                    preds,
                    FoldSummary {
                        fold,
                        train_size: train.len(),
                        valid_size: valid.len(),
                        best_epoch: result.best_epoch,
                        epoch_metrics: result.epoch_metrics,
                    },
                ))
            };
            run().map_err(|e| Error::Fold {
                fold,
                source: Box::new(e),
            })
        })
        .collect();

    let mut predictions = Vec::with_capacity(k);
    let mut summaries = Vec::with_capacity(k);
    for r in results {
        let (p, s) = r?;
        predictions.push(p);
        summaries.push(s);
    }
    Ok(CvRun {
        folds,
        predictions,
        summaries,
    })
}
