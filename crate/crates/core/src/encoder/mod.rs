//! Sequence encoder abstraction: configuration, model registry, the tiny
//! reference encoder and its checkpoint format.

mod checkpoint;
pub(crate) mod network;
pub mod tokenizer;

use std::path::PathBuf;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::task::Task;

pub use checkpoint::{load_checkpoint, save_checkpoint};
use network::{Group, Layout, Network};
pub use tokenizer::HashTokenizer;

pub const TINY_REFERENCE: &str = "tiny-reference";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub name: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: u32,
    pub max_positions: usize,
    /// Outputs of the classification head a freshly built model starts with.
    pub num_labels: usize,
    pub lowercase: bool,
    pub pretrained_source: Option<PathBuf>,
}

impl EncoderConfig {
    pub fn tiny_reference() -> Self {
        EncoderConfig {
            name: TINY_REFERENCE.to_string(),
            num_layers: 2,
            hidden_dim: 32,
            num_heads: 4,
            ffn_dim: 128,
            vocab_size: 2048,
            max_positions: 128,
            num_labels: 2,
            lowercase: true,
            pretrained_source: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size as usize),
            ("max_positions", self.max_positions),
            ("num_labels", self.num_labels),
        ];
        if let Some((field, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{field} must be positive")));
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidArgument(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.max_positions < 3 {
            return Err(Error::InvalidArgument("max_positions must be at least 3".into()));
        }
        Ok(())
    }

    pub fn tokenizer(&self) -> HashTokenizer {
        HashTokenizer::new(self.vocab_size, self.lowercase)
    }
}

/// Named encoder configurations. The published families are listed with
/// their real dimensions; they can only be built from a converted
/// checkpoint at `checkpoints/<name>.ckpt` (or wherever `pretrained_source`
/// points).
#[derive(Debug, Clone)]
pub struct ModelRegistry {
    entries: Vec<EncoderConfig>,
}

impl ModelRegistry {
    pub fn standard() -> Self {
        let published = |name: &str, layers, hidden, heads, vocab, lowercase| EncoderConfig {
            name: name.to_string(),
            num_layers: layers,
            hidden_dim: hidden,
            num_heads: heads,
            ffn_dim: 4 * hidden,
            vocab_size: vocab,
            max_positions: 128,
            num_labels: 2,
            lowercase,
            pretrained_source: Some(PathBuf::from(format!("checkpoints/{name}.ckpt"))),
        };
        ModelRegistry {
            entries: vec![
                published("bert-base", 12, 768, 12, 30_522, true),
                published("bert-large", 24, 1024, 16, 30_522, true),
                published("roberta-base", 12, 768, 12, 50_265, false),
                published("roberta-large", 24, 1024, 16, 50_265, false),
                published("xlm-roberta", 24, 1024, 16, 250_002, false),
                published("albert-large-v1", 24, 1024, 16, 30_000, true),
                published("albert-large-v2", 24, 1024, 16, 30_000, true),
                published("albert-xxlarge-v1", 12, 4096, 64, 30_000, true),
                published("albert-xxlarge-v2", 12, 4096, 64, 30_000, true),
                EncoderConfig::tiny_reference(),
            ],
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Result<EncoderConfig> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .cloned()
            .ok_or_else(|| Error::UnknownModel {
                name: name.to_string(),
                valid: self.names(),
            })
    }
}

/// An encoder with an MLM head and a classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel<S> {
    config: EncoderConfig,
    pub(crate) layout: Layout,
    pub(crate) params: Vec<S>,
}

/// Build a model from its configuration: loaded from `pretrained_source`
/// when set, otherwise initialized deterministically from `seed`.
pub fn build_encoder<S: Scalar>(config: &EncoderConfig, seed: u64) -> Result<EncoderModel<S>> {
    config.validate()?;
    match &config.pretrained_source {
        Some(path) => {
            if !path.exists() {
                return Err(Error::Checkpoint(format!(
                    "pretrained weights for `{}` not found at {}; convert the checkpoint into this \
                     crate's format or use `{TINY_REFERENCE}`",
                    config.name,
                    path.display()
                )));
            }
            let model: EncoderModel<S> = load_checkpoint(path)?;
            let (a, b) = (model.config(), config);
            let same_shape = a.num_layers == b.num_layers
                && a.hidden_dim == b.hidden_dim
                && a.num_heads == b.num_heads
                && a.ffn_dim == b.ffn_dim
                && a.vocab_size == b.vocab_size;
            if !same_shape {
                return Err(Error::Checkpoint(format!(
                    "checkpoint at {} does not match the `{}` architecture",
                    path.display(),
                    config.name
                )));
            }
            Ok(model)
        }
        None => Ok(EncoderModel::random(config.clone(), seed)),
    }
}

/// Look a name up in the standard registry and build it.
pub fn build_named<S: Scalar>(name: &str, seed: u64) -> Result<EncoderModel<S>> {
    build_encoder(&ModelRegistry::standard().get(name)?, seed)
}

impl<S: Scalar> EncoderModel<S> {
    /// Randomly initialized model; `config` must already be valid.
    pub fn random(config: EncoderConfig, seed: u64) -> Self {
        let layout = Layout::new(&config, config.num_labels);
        let mut params = vec![S::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
        layout.init(&mut params, 0, &mut rng);
        EncoderModel { config, layout, params }
    }

    pub(crate) fn from_parts(config: EncoderConfig, num_labels: usize, params: Vec<S>) -> Result<Self> {
        let layout = Layout::new(&config, num_labels);
        if params.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(EncoderModel { config, layout, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> HashTokenizer {
        self.config.tokenizer()
    }

    pub fn num_labels(&self) -> usize {
        self.layout.num_labels
    }

    pub fn num_parameters(&self) -> usize {
        self.params.len()
    }

    /// Flat view of every parameter, in layout order.
    pub fn parameters(&self) -> &[S] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    /// `(name, rows, cols)` for every tensor, in layout order.
    pub fn tensor_shapes(&self) -> Vec<(String, usize, usize)> {
        self.layout.tensors.iter().map(|t| (t.name.clone(), t.rows, t.cols)).collect()
    }

    pub fn tokenize(&self, text: &str, max_len: usize) -> Result<Vec<u32>> {
        self.tokenizer().encode(text, max_len.min(self.config.max_positions))
    }

    /// Replace the classification head with a fresh one of `num_labels`
    /// outputs. The encoder and MLM head are untouched.
    pub fn reset_classifier(&mut self, num_labels: usize, seed: u64) {
        let layout = Layout::new(&self.config, num_labels);
        let start = layout.classifier_offset();
        self.params.truncate(start);
        self.params.resize(layout.total, S::zero());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "classifier-head"));
        layout.init(&mut self.params, start, &mut rng);
        self.layout = layout;
    }

    pub(crate) fn network(&self) -> Network<'_, S> {
        Network {
            cfg: &self.config,
            layout: &self.layout,
            params: &self.params,
        }
    }

    pub(crate) fn group_ranges(&self, group: Group) -> Vec<std::ops::Range<usize>> {
        self.layout.group_ranges(group)
    }

    pub(crate) fn check_sequence(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        if ids.len() > self.config.max_positions {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                max: self.config.max_positions,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "token id {bad} outside vocabulary of size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    pub(crate) fn check_task(&self, task: Task) -> Result<()> {
        if self.num_labels() != task.num_labels() {
            return Err(Error::LabelCountMismatch {
                head: self.num_labels(),
                task: task.letter(),
                labels: task.num_labels(),
            });
        }
        Ok(())
    }

    /// Class probabilities, one row per sequence, columns in the task's
    /// canonical label order.
    pub fn classify(&self, batch: &[Vec<u32>], task: Task) -> Result<Array2<S>> {
        self.check_task(task)?;
        for ids in batch {
            self.check_sequence(ids)?;
        }
        let net = self.network();
        let mut out = Array2::zeros((batch.len(), task.num_labels()));
        for (mut row, ids) in out.outer_iter_mut().zip(batch) {
            row.assign(&ndarray::Array1::from(net.class_probs(ids)));
        }
        Ok(out)
    }

    /// Mean classification cross-entropy over a batch of `(ids, target)`
    /// pairs; fills `grad` (same length as the parameters) when given.
    pub fn classification_loss(&self, batch: &[(Vec<u32>, usize)], grad: Option<&mut [S]>) -> Result<S> {
        for (ids, target) in batch {
            self.check_sequence(ids)?;
            if *target >= self.num_labels() {
                return Err(Error::InvalidArgument(format!("target {target} outside head")));
            }
        }
        let net = self.network();
        let weight = S::one() / S::from_usize(batch.len().max(1)).unwrap();
        let mut total = S::zero();
        match grad {
            Some(g) => {
                g.fill(S::zero());
                for (ids, target) in batch {
                    total += net.class_loss(ids, *target, weight, Some(&mut *g));
                }
            }
            None => {
                for (ids, target) in batch {
                    total += net.class_loss(ids, *target, weight, None);
                }
            }
        }
        Ok(total * weight)
    }

    /// Vocabulary distribution predicted at every position of one sequence.
    pub fn mlm_probabilities(&self, ids: &[u32]) -> Result<Array2<S>> {
        self.check_sequence(ids)?;
        Ok(self.network().mlm_probs(ids))
    }
}
