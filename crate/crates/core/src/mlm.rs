//! Masked-language-model batches and in-domain further pre-training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::network::Group;
use crate::encoder::tokenizer::{is_special, MASK_ID, NUM_SPECIAL, PAD_ID};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::seed::derive_indexed;

/// Target value at positions that do not contribute to the loss.
pub const IGNORE_ID: u32 = u32::MAX;
pub const DEFAULT_MASK_RATE: f64 = 0.15;

const MASK_SHARE: f64 = 0.8;
const RANDOM_SHARE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskAction {
    /// Replaced by the mask token.
    Mask,
    /// Replaced by a uniformly drawn non-special token.
    Random,
    /// Left as is (but still predicted).
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedRow {
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub mask_positions: Vec<bool>,
    /// `(position, action)` for every selected position, in position order.
    pub selections: Vec<(usize, MaskAction)>,
}

/// Padded rows; `target_ids` holds [`IGNORE_ID`] wherever
/// `mask_positions` is false.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedBatch {
    pub input_ids: Vec<Vec<u32>>,
    pub target_ids: Vec<Vec<u32>>,
    pub mask_positions: Vec<Vec<bool>>,
    /// Unpadded length of each row.
    pub lengths: Vec<usize>,
}

impl MaskedBatch {
    pub fn from_rows(rows: Vec<MaskedRow>) -> Self {
        let width = rows.iter().map(|r| r.input_ids.len()).max().unwrap_or(0);
        let mut batch = MaskedBatch {
            input_ids: Vec::with_capacity(rows.len()),
            target_ids: Vec::with_capacity(rows.len()),
            mask_positions: Vec::with_capacity(rows.len()),
            lengths: Vec::with_capacity(rows.len()),
        };
        for mut row in rows {
            let len = row.input_ids.len();
            row.input_ids.resize(width, PAD_ID);
            row.target_ids.resize(width, IGNORE_ID);
            row.mask_positions.resize(width, false);
            batch.input_ids.push(row.input_ids);
            batch.target_ids.push(row.target_ids);
            batch.mask_positions.push(row.mask_positions);
            batch.lengths.push(len);
        }
        batch
    }

    pub fn num_masked(&self) -> usize {
        self.mask_positions.iter().flatten().filter(|&&m| m).count()
    }
}

/// Number of positions selected out of `maskable`.
pub fn mask_count(maskable: usize, rate: f64) -> usize {
    ((rate * maskable as f64).round() as usize).clamp(1, maskable.max(1))
}

/// Select exactly `max(1, round(rate · m))` of the `m` non-sentinel
/// positions; each selected position is masked (80 %), replaced by a random
/// token (10 %) or kept (10 %).
pub fn mask_tokens(sequence: &[u32], mask_rate: f64, vocab_size: u32, seed: u64) -> Result<MaskedRow> {
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(Error::InvalidArgument(format!("mask_rate must be in (0, 1), got {mask_rate}")));
    }
    let maskable: Vec<usize> = (0..sequence.len()).filter(|&i| !is_special(sequence[i])).collect();
    if maskable.is_empty() {
        return Err(Error::NoMaskableTokens);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = mask_count(maskable.len(), mask_rate);
    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, maskable.len(), count)
        .into_iter()
        .map(|i| maskable[i])
        .collect();
    chosen.sort_unstable();

    let mut row = MaskedRow {
        input_ids: sequence.to_vec(),
        target_ids: vec![IGNORE_ID; sequence.len()],
        mask_positions: vec![false; sequence.len()],
        selections: Vec::with_capacity(count),
    };
    for pos in chosen {
        row.target_ids[pos] = sequence[pos];
        row.mask_positions[pos] = true;
        let u: f64 = rng.random();
        let action = if u < MASK_SHARE {
            row.input_ids[pos] = MASK_ID;
            MaskAction::Mask
        } else if u < MASK_SHARE + RANDOM_SHARE && vocab_size > NUM_SPECIAL {
            row.input_ids[pos] = rng.random_range(NUM_SPECIAL..vocab_size);
            MaskAction::Random
        } else {
            MaskAction::Keep
        };
        row.selections.push((pos, action));
    }
    Ok(row)
}

/// Mean cross-entropy over the masked positions of `batch`; fills `grad`
/// when given. Targets at unmasked positions are never read.
pub fn masked_batch_loss<S: Scalar>(
    model: &EncoderModel<S>,
    batch: &MaskedBatch,
    grad: Option<&mut [S]>,
) -> Result<f64> {
    let (sum, count) = masked_loss_sum(model, batch, grad, true)?;
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Summed loss and number of masked positions. With `normalize`, the
/// gradient is scaled by `1 / count`.
fn masked_loss_sum<S: Scalar>(
    model: &EncoderModel<S>,
    batch: &MaskedBatch,
    mut grad: Option<&mut [S]>,
    normalize: bool,
) -> Result<(f64, usize)> {
    let count = batch.num_masked();
    let weight = if normalize && count > 0 {
        S::one() / S::from_usize(count).unwrap()
    } else {
        S::one()
    };
    if let Some(g) = grad.as_deref_mut() {
        g.fill(S::zero());
    }
    let net = model.network();
    let mut total = 0.0;
    for (i, &len) in batch.lengths.iter().enumerate() {
        let ids = &batch.input_ids[i][..len];
        model.check_sequence(ids)?;
        let targets: Vec<(usize, u32)> = (0..len)
            .filter(|&p| batch.mask_positions[i][p])
            .map(|p| (p, batch.target_ids[i][p]))
            .collect();
        if targets.is_empty() {
            continue;
        }
        if let Some(&(_, bad)) = targets.iter().find(|(_, t)| *t >= model.config().vocab_size) {
            return Err(Error::InvalidArgument(format!("target id {bad} outside vocabulary")));
        }
        total += net.mlm_loss(ids, &targets, weight, grad.as_deref_mut()).as_f64();
    }
    Ok((total, count))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier on `learning_rate`; the tiny reference encoder trains at
    /// 100× the rate used for full-size checkpoints.
    pub lr_scale: f64,
    pub mask_rate: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for MlmTrainConfig {
    fn default() -> Self {
        MlmTrainConfig {
            epochs: 1,
            batch_size: 4,
            learning_rate: 2e-5,
            lr_scale: 1.0,
            mask_rate: DEFAULT_MASK_RATE,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl MlmTrainConfig {
    pub fn tiny_reference() -> Self {
        MlmTrainConfig {
            lr_scale: 100.0,
            ..Self::default()
        }
    }

    pub fn effective_lr(&self) -> f64 {
        self.learning_rate * self.lr_scale
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.effective_lr() >= 0.0) {
            return Err(Error::InvalidArgument("learning rate must be non-negative".into()));
        }
        Ok(())
    }
}

fn tokenize_corpus<S: Scalar>(model: &EncoderModel<S>, corpus: &[String]) -> Result<Vec<(usize, Vec<u32>)>> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("MLM corpus is empty".into()));
    }
    let max_len = model.config().max_positions;
    let mut out = Vec::with_capacity(corpus.len());
    for (i, line) in corpus.iter().enumerate() {
        let ids = model.tokenize(line, max_len)?;
        if ids.iter().any(|&t| !is_special(t)) {
            out.push((i, ids));
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("MLM corpus has no maskable tokens".into()));
    }
    Ok(out)
}

/// Continue MLM training of `model` on `corpus` with a fresh (dynamic) mask
/// every epoch. Returns the adapted copy and the loss of every step.
pub fn further_pretrain<S: Scalar>(
    model: &EncoderModel<S>,
    corpus: &[String],
    config: &MlmTrainConfig,
) -> Result<(EncoderModel<S>, Vec<f64>)> {
    config.validate()?;
    let sequences = tokenize_corpus(model, corpus)?;
    let mut model = model.clone();
    let vocab = model.config().vocab_size;
    let ranges: Vec<_> = [Group::Encoder, Group::MlmHead]
        .into_iter()
        .flat_map(|g| model.group_ranges(g))
        .collect();
    let mut adam = Adam::new(config.adam, model.num_parameters());
    let mut grad = vec![S::zero(); model.num_parameters()];
    let lr = config.effective_lr();
    let mut curve = Vec::new();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..sequences.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_indexed(config.seed, "mlm-shuffle", epoch as u64)));
        let mask_seed = derive_indexed(config.seed, "mlm-mask", epoch as u64);
        for chunk in order.chunks(config.batch_size) {
            let rows = chunk
                .iter()
                .map(|&k| {
                    let (line, ids) = &sequences[k];
                    mask_tokens(ids, config.mask_rate, vocab, derive_indexed(mask_seed, "row", *line as u64))
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = MaskedBatch::from_rows(rows);
            let loss = masked_batch_loss(&model, &batch, Some(&mut grad))?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: curve.len(),
                    batch_ids: chunk.iter().map(|&k| sequences[k].0.to_string()).collect(),
                });
            }
            curve.push(loss);
            adam.step(&mut model.params, &grad, &ranges, lr);
        }
    }
    Ok((model, curve))
}

/// Mean masked cross-entropy over `corpus` with masks fixed by `seed`, so
/// different models are compared on identical inputs.
pub fn mlm_heldout_loss<S: Scalar>(model: &EncoderModel<S>, corpus: &[String], seed: u64) -> Result<f64> {
    let sequences = tokenize_corpus(model, corpus)?;
    let vocab = model.config().vocab_size;
    let rows = sequences
        .iter()
        .map(|(line, ids)| mask_tokens(ids, DEFAULT_MASK_RATE, vocab, derive_indexed(seed, "heldout", *line as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut sum = 0.0;
    let mut count = 0;
    for chunk in rows.chunks(64) {
        let (s, c) = masked_loss_sum(model, &MaskedBatch::from_rows(chunk.to_vec()), None, false)?;
        sum += s;
        count += c;
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::tokenizer::{BEGIN_ID, END_ID};
    use crate::encoder::{build_named, TINY_REFERENCE};

    fn seq(m: usize) -> Vec<u32> {
        let mut s = vec![BEGIN_ID];
        s.extend((0..m as u32).map(|i| 100 + i));
        s.push(END_ID);
        s
    }

    #[test]
    fn exact_counts() {
        assert_eq!(mask_tokens(&seq(20), 0.15, 2048, 1).unwrap().selections.len(), 3);
        assert_eq!(mask_tokens(&seq(1), 0.15, 2048, 1).unwrap().selections.len(), 1);
        assert_eq!(mask_count(20, 0.15), 3);
        assert_eq!(mask_count(10, 0.15), 2);
    }

    #[test]
    fn no_maskable_token_is_an_error() {
        assert!(matches!(
            mask_tokens(&[BEGIN_ID, END_ID], 0.15, 2048, 0),
            Err(Error::NoMaskableTokens)
        ));
    }

    #[test]
    fn targets_align_with_mask() {
        let s = seq(30);
        let row = mask_tokens(&s, 0.15, 2048, 42).unwrap();
        for i in 0..s.len() {
            assert_eq!(row.target_ids[i] != IGNORE_ID, row.mask_positions[i]);
            if row.mask_positions[i] {
                assert_eq!(row.target_ids[i], s[i]);
            } else {
                assert_eq!(row.input_ids[i], s[i]);
            }
        }
        assert!(!row.mask_positions[0] && !row.mask_positions[s.len() - 1]);
        assert_eq!(row, mask_tokens(&s, 0.15, 2048, 42).unwrap());
    }

    #[test]
    fn padding_never_masked() {
        let a = mask_tokens(&seq(3), 0.15, 2048, 1).unwrap();
        let b = mask_tokens(&seq(12), 0.15, 2048, 2).unwrap();
        let batch = MaskedBatch::from_rows(vec![a, b]);
        assert_eq!(batch.input_ids[0].len(), 14);
        assert!(batch.input_ids[0][5..].iter().all(|&t| t == PAD_ID));
        assert!(batch.mask_positions[0][5..].iter().all(|&m| !m));
        assert_eq!(batch.lengths, vec![5, 14]);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let model: EncoderModel<f32> = build_named(TINY_REFERENCE, 1).unwrap();
        let corpus = vec!["a b c".to_string(), "d e f g".to_string()];
        let cfg = MlmTrainConfig {
            epochs: 0,
            ..MlmTrainConfig::tiny_reference()
        };
        let (adapted, curve) = further_pretrain(&model, &corpus, &cfg).unwrap();
        assert!(curve.is_empty());
        assert_eq!(adapted, model);
    }

    #[test]
    fn empty_corpus_rejected() {
        let model: EncoderModel<f32> = build_named(TINY_REFERENCE, 1).unwrap();
        assert!(further_pretrain(&model, &[], &MlmTrainConfig::default()).is_err());
        assert!(mlm_heldout_loss(&model, &[], 0).is_err());
    }

    #[test]
    fn defaults() {
        let cfg = MlmTrainConfig::default();
        assert_eq!((cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.mask_rate), (1, 4, 2e-5, 0.15));
    }
}
