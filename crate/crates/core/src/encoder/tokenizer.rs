use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::fnv1a;

pub const PAD_ID: u32 = 0;
pub const BEGIN_ID: u32 = 1;
pub const END_ID: u32 = 2;
pub const MASK_ID: u32 = 3;
pub const UNK_ID: u32 = 4;
/// Ids below this value are reserved for sentinels and never produced by
/// hashing.
pub const NUM_SPECIAL: u32 = 5;

pub fn is_special(id: u32) -> bool {
    id < NUM_SPECIAL
}

/// Whitespace tokenizer that hashes each word into a fixed number of buckets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashTokenizer {
    pub vocab_size: u32,
    pub lowercase: bool,
}

impl HashTokenizer {
    pub fn new(vocab_size: u32, lowercase: bool) -> Self {
        HashTokenizer { vocab_size, lowercase }
    }

    pub fn word_id(&self, word: &str) -> u32 {
        if self.vocab_size <= NUM_SPECIAL {
            return UNK_ID;
        }
        let hash = if self.lowercase {
            fnv1a(word.to_lowercase().as_bytes())
        } else {
            fnv1a(word.as_bytes())
        };
        NUM_SPECIAL + (hash % u64::from(self.vocab_size - NUM_SPECIAL)) as u32
    }

    /// `[begin] words… [end]`, truncated so the whole sequence fits in
    /// `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> Result<Vec<u32>> {
        if max_len < 3 {
            return Err(Error::InvalidArgument(format!(
                "max_len must be at least 3 to hold the sentinels, got {max_len}"
            )));
        }
        let mut ids = Vec::with_capacity(max_len.min(64));
        ids.push(BEGIN_ID);
        ids.extend(text.split_whitespace().take(max_len - 2).map(|w| self.word_id(w)));
        ids.push(END_ID);
        Ok(ids)
    }
}
