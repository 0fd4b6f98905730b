//! Deterministic synthetic corpora for desk-scale experiments: a
//! trigger-word Task A corpus, a domain-shift setup for MLM adaptation, and
//! a labels-only gold fixture.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledExample;
use crate::encoder::tokenizer::HashTokenizer;
use crate::seed::derive_seed;
use crate::task::Label;

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "pu", "ra", "si", "to", "vu", "ze", "bo", "da", "fi", "gu", "he", "jo",
];

/// Draws pseudo-words whose hash buckets are pairwise distinct (and distinct
/// from anything already claimed), so the hashing tokenizer never merges two
/// synthetic words.
#[derive(Debug, Clone)]
pub struct WordFactory {
    tokenizer: HashTokenizer,
    taken: HashSet<u32>,
    next: u64,
}

impl WordFactory {
    pub fn new(vocab_size: u32) -> Self {
        let tokenizer = HashTokenizer::new(vocab_size, true);
        // Placeholders that survive normalization in some inputs.
        let taken = ["@user", "url"].iter().map(|w| tokenizer.word_id(w)).collect();
        WordFactory {
            tokenizer,
            taken,
            next: 0,
        }
    }

    fn spell(mut n: u64) -> String {
        let mut word = String::new();
        loop {
            word.push_str(SYLLABLES[(n % 16) as usize]);
            n /= 16;
            if n == 0 {
                break;
            }
        }
        word
    }

    /// `count` fresh words; panics if the vocabulary runs out of buckets.
    pub fn take(&mut self, count: usize) -> Vec<String> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            assert!(
                self.taken.len() + 5 < self.tokenizer.vocab_size as usize,
                "vocabulary exhausted"
            );
            let word = Self::spell(self.next + 16);
            self.next += 1;
            if self.taken.insert(self.tokenizer.word_id(&word)) {
                out.push(word);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerCorpusConfig {
    pub size: usize,
    /// Fraction of OFF examples (rounded to a count).
    pub offensive_fraction: f64,
    pub num_triggers: usize,
    pub num_neutral: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Fraction of labels flipped after generation (0 keeps the rule exact).
    pub label_noise: f64,
    pub vocab_size: u32,
    pub seed: u64,
}

impl Default for TriggerCorpusConfig {
    fn default() -> Self {
        TriggerCorpusConfig {
            size: 2000,
            offensive_fraction: 0.5,
            num_triggers: 20,
            num_neutral: 300,
            min_words: 5,
            max_words: 12,
            label_noise: 0.0,
            vocab_size: 2048,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TriggerCorpus {
    pub examples: Vec<LabeledExample>,
    pub triggers: Vec<String>,
    pub neutral: Vec<String>,
}

fn sentence(rng: &mut ChaCha8Rng, neutral: &[String], special: &[String], n_special: usize, len: (usize, usize)) -> String {
    let n = rng.random_range(len.0..=len.1).max(n_special);
    let mut words: Vec<&str> = (0..n).map(|_| neutral.choose(rng).expect("non-empty").as_str()).collect();
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(rng);
    for &slot in slots.iter().take(n_special) {
        words[slot] = special.choose(rng).expect("non-empty");
    }
    let mut text = words.join(" ");
    // Some tweets carry placeholders that normalization strips.
    match rng.random_range(0..6) {
        0 => text.insert_str(0, "@USER "),
        1 => text.push_str(" URL"),
        _ => {}
    }
    text
}

fn labels_for(n: usize, offensive_fraction: f64, rng: &mut ChaCha8Rng) -> Vec<Label> {
    let off = ((n as f64) * offensive_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..n).map(|i| if i < off { Label::Off } else { Label::Not }).collect();
    labels.shuffle(rng);
    labels
}

/// Task A corpus where a tweet is OFF exactly when it contains one of the
/// trigger words.
pub fn trigger_corpus(config: &TriggerCorpusConfig) -> TriggerCorpus {
    let mut words = WordFactory::new(config.vocab_size);
    let triggers = words.take(config.num_triggers);
    let neutral = words.take(config.num_neutral);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "trigger-corpus"));
    let labels = labels_for(config.size, config.offensive_fraction, &mut rng);
    let mut examples: Vec<LabeledExample> = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let n_special = if label == Label::Off { rng.random_range(1..=2) } else { 0 };
            let text = sentence(&mut rng, &neutral, &triggers, n_special, (config.min_words, config.max_words));
            LabeledExample::new(format!("{}", 10_000 + i), text, label)
        })
        .collect();
    let flips = ((examples.len() as f64) * config.label_noise).round() as usize;
    for i in rand::seq::index::sample(&mut rng, examples.len(), flips.min(examples.len())) {
        let e = &mut examples[i];
        e.label = if e.label == Label::Off { Label::Not } else { Label::Off };
    }
    TriggerCorpus {
        examples,
        triggers,
        neutral,
    }
}

/// Split into (train, held-out) with a seeded shuffle; the held-out part has
/// `round(fraction * n)` examples. Both parts keep input order.
pub fn holdout_split(
    examples: &[LabeledExample],
    fraction: f64,
    seed: u64,
) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let n_test = ((examples.len() as f64) * fraction).round() as usize;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "holdout")));
    let test: HashSet<usize> = order[..n_test].iter().copied().collect();
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (i, e) in examples.iter().enumerate() {
        if test.contains(&i) {
            held.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    (train, held)
}

/// Gold fixture with `not` NOT rows followed by `off` OFF rows and numeric
/// ids.
pub fn gold_fixture(not: usize, off: usize) -> Vec<LabeledExample> {
    (0..not + off)
        .map(|i| {
            let label = if i < not { Label::Not } else { Label::Off };
            LabeledExample::new(format!("{}", 100_000 + i), format!("tweet {i}"), label)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShiftConfig {
    /// Offensive word cluster.
    pub cluster_size: usize,
    /// How many cluster words appear in task training data; the rest only
    /// occur in the test set and the MLM corpus.
    pub seen_words: usize,
    pub num_neutral: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub pretrain_size: usize,
    pub heldout_size: usize,
    pub offensive_fraction: f64,
    pub vocab_size: u32,
    pub seed: u64,
}

impl Default for DomainShiftConfig {
    fn default() -> Self {
        DomainShiftConfig {
            cluster_size: 40,
            seen_words: 20,
            num_neutral: 200,
            train_size: 600,
            test_size: 400,
            pretrain_size: 4000,
            heldout_size: 300,
            offensive_fraction: 0.5,
            vocab_size: 2048,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DomainShift {
    pub train: Vec<LabeledExample>,
    pub valid: Vec<LabeledExample>,
    /// OFF test examples use only unseen cluster words.
    pub test: Vec<LabeledExample>,
    pub pretrain: Vec<String>,
    pub heldout: Vec<String>,
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
}

/// Task and in-domain corpora that share a small vocabulary far from the
/// encoder's uniform initialization. In the MLM corpus cluster words
/// co-occur with one another, which is the only signal that links unseen
/// test words to the training triggers.
pub fn domain_shift(config: &DomainShiftConfig) -> DomainShift {
    let mut words = WordFactory::new(config.vocab_size);
    let cluster = words.take(config.cluster_size);
    let neutral = words.take(config.num_neutral);
    let (seen, unseen) = cluster.split_at(config.seen_words.min(cluster.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "domain-shift"));

    let labeled = |rng: &mut ChaCha8Rng, n: usize, pool: &[String], prefix: usize| -> Vec<LabeledExample> {
        labels_for(n, config.offensive_fraction, rng)
            .into_iter()
            .enumerate()
            .map(|(i, label)| {
                let k = if label == Label::Off { rng.random_range(1..=2) } else { 0 };
                LabeledExample::new(format!("{}", prefix + i), sentence(rng, &neutral, pool, k, (5, 12)), label)
            })
            .collect()
    };
    let train_all = labeled(&mut rng, config.train_size, seen, 20_000);
    let n_valid = config.train_size / 5;
    let valid = train_all[..n_valid].to_vec();
    let train = train_all[n_valid..].to_vec();
    let test = labeled(&mut rng, config.test_size, unseen, 40_000);

    let unlabeled = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
        (0..n)
            .map(|_| {
                let k = if rng.random_bool(0.5) { rng.random_range(2..=4) } else { 0 };
                sentence(rng, &neutral, &cluster, k, (5, 12))
            })
            .collect()
    };
    let pretrain = unlabeled(&mut rng, config.pretrain_size);
    let heldout = unlabeled(&mut rng, config.heldout_size);
    DomainShift {
        train,
        valid,
        test,
        pretrain,
        heldout,
        seen: seen.to_vec(),
        unseen: unseen.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::normalize_tweet;

    #[test]
    fn factory_words_never_collide() {
        let mut f = WordFactory::new(2048);
        let words = f.take(500);
        let tok = HashTokenizer::new(2048, true);
        let ids: HashSet<u32> = words.iter().map(|w| tok.word_id(w)).collect();
        assert_eq!(ids.len(), 500);
        assert_eq!(words.iter().collect::<HashSet<_>>().len(), 500);
    }

    #[test]
    fn trigger_labels_follow_rule() {
        let c = trigger_corpus(&TriggerCorpusConfig::default());
        assert_eq!(c.examples.len(), 2000);
        let triggers: HashSet<&str> = c.triggers.iter().map(String::as_str).collect();
        let mut off = 0;
        for e in &c.examples {
            let has = normalize_tweet(&e.text).split(' ').any(|w| triggers.contains(w));
            assert_eq!(has, e.label == Label::Off, "{e:?}");
            off += usize::from(has);
        }
        assert_eq!(off, 1000);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = trigger_corpus(&TriggerCorpusConfig::default());
        let b = trigger_corpus(&TriggerCorpusConfig::default());
        assert_eq!(a.examples, b.examples);
        let c = trigger_corpus(&TriggerCorpusConfig {
            seed: 1,
            ..Default::default()
        });
        assert_ne!(a.examples, c.examples);
    }

    #[test]
    fn label_noise_flips_exact_count() {
        let c = trigger_corpus(&TriggerCorpusConfig {
            label_noise: 0.1,
            ..Default::default()
        });
        let triggers: HashSet<&str> = c.triggers.iter().map(String::as_str).collect();
        let wrong = c
            .examples
            .iter()
            .filter(|e| normalize_tweet(&e.text).split(' ').any(|w| triggers.contains(w)) != (e.label == Label::Off))
            .count();
        assert_eq!(wrong, 200);
    }

    #[test]
    fn imbalanced_fraction() {
        let c = trigger_corpus(&TriggerCorpusConfig {
            size: 1000,
            offensive_fraction: 0.1,
            ..Default::default()
        });
        assert_eq!(c.examples.iter().filter(|e| e.label == Label::Off).count(), 100);
    }

    #[test]
    fn holdout_partitions() {
        let c = trigger_corpus(&TriggerCorpusConfig::default());
        let (train, test) = holdout_split(&c.examples, 0.2, 3);
        assert_eq!((train.len(), test.len()), (1600, 400));
        crate::corpus::ensure_disjoint(&train, &test).unwrap();
    }

    #[test]
    fn gold_fixture_counts() {
        let g = gold_fixture(7221, 2779);
        assert_eq!(g.len(), 10_000);
        assert_eq!(g.iter().filter(|e| e.label == Label::Not).count(), 7221);
    }

    #[test]
    fn domain_shift_separates_cluster_words() {
        let d = domain_shift(&DomainShiftConfig::default());
        let seen: HashSet<&str> = d.seen.iter().map(String::as_str).collect();
        let unseen: HashSet<&str> = d.unseen.iter().map(String::as_str).collect();
        let words = |e: &LabeledExample| normalize_tweet(&e.text).split(' ').map(str::to_string).collect::<Vec<_>>();
        for e in d.train.iter().chain(&d.valid) {
            assert!(words(e).iter().all(|w| !unseen.contains(w.as_str())));
        }
        for e in &d.test {
            assert!(words(e).iter().all(|w| !seen.contains(w.as_str())));
            assert_eq!(words(e).iter().any(|w| unseen.contains(w.as_str())), e.label == Label::Off);
        }
        assert!(d.pretrain.iter().any(|l| l.split(' ').any(|w| unseen.contains(w))));
        assert_eq!(d.train.len() + d.valid.len(), 600);
    }
}
