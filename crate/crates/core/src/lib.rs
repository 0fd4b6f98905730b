//! Training, ensembling and evaluation pipeline for hierarchical
//! offensive-language detection (OLID tasks A/B/C): tweet preprocessing,
//! masked-language-model further pre-training, fine-tuning with best-epoch
//! selection, k-fold cross-validated prediction, hard/soft voting and
//! classification metrics.
//!
//! The encoder and its training loops are generic over [`Scalar`]
//! (`f32`/`f64`); the aliases below fix the common choices.

pub mod corpus;
pub mod encoder;
pub mod ensemble;
pub mod error;
pub mod evaluate;
pub mod finetune;
pub mod mlm;
pub mod optim;
pub mod prediction;
pub mod scalar;
pub mod seed;
pub mod synthetic;
pub mod task;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use task::{Label, Task, TextItem};

/// Single-precision encoder, used by the command-line pipeline.
pub type Encoder = encoder::EncoderModel<f32>;
/// Double-precision encoder, used for gradient checks.
pub type Encoder64 = encoder::EncoderModel<f64>;
