//! Ingestion, normalization, deduplication, sampling and fold assignment.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{Label, Task, TextItem};

const OLID_HEADER: [&str; 5] = ["id", "tweet", "subtask_a", "subtask_b", "subtask_c"];
const NULL_LABEL: &str = "NULL";

/// A raw or normalized tweet. The weak-label statistics are carried for
/// provenance only; nothing in the crate trains on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: String,
    pub text: String,
    pub weak: Option<WeakLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakLabel {
    pub mean: f64,
    /// Stored verbatim from the `std` column.
    pub spread: f64,
}

impl TweetRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        TweetRecord {
            id: id.into(),
            text: text.into(),
            weak: None,
        }
    }
}

impl TextItem for TweetRecord {
    fn id(&self) -> &str {
        &self.id
    }
    fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub label: Label,
}

impl LabeledExample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Label) -> Self {
        LabeledExample {
            id: id.into(),
            text: text.into(),
            label,
        }
    }
}

impl TextItem for LabeledExample {
    fn id(&self) -> &str {
        &self.id
    }
    fn text(&self) -> &str {
        &self.text
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_label_cell(cell: &str, task: Task) -> Result<Option<Label>> {
    let cell = cell.trim();
    if cell == NULL_LABEL || cell.is_empty() {
        return Ok(None);
    }
    let label: Label = cell.parse()?;
    if task.index_of(label).is_none() {
        return Err(Error::UnknownLabel(cell.to_string()));
    }
    Ok(Some(label))
}

/// Load one sub-task's examples from an OLID TSV file.
///
/// Rows whose label for `task` is `NULL` are skipped, as are rows that
/// violate the hierarchy (a Task-B example requires `subtask_a = OFF`, a
/// Task-C example requires `subtask_b = TIN`).
pub fn load_olid(path: impl AsRef<Path>, task: Task) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let content = read_to_string(path)?;
    parse_olid(path, &content, task)
}

pub(crate) fn parse_olid(path: &Path, content: &str, task: Task) -> Result<Vec<LabeledExample>> {
    let mut lines = content.lines().enumerate();
    match lines.next() {
        Some((_, header)) => {
            let cols: Vec<&str> = header.trim_end_matches('\r').split('\t').map(str::trim).collect();
            if cols != OLID_HEADER {
                return Err(malformed(
                    path,
                    1,
                    format!("expected header `{}`, found `{}`", OLID_HEADER.join("\\t"), cols.join("\\t")),
                ));
            }
        }
        None => return Err(malformed(path, 1, "missing header row")),
    }

    let mut out = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != OLID_HEADER.len() {
            return Err(malformed(
                path,
                line_no,
                format!("expected {} columns, found {}", OLID_HEADER.len(), cols.len()),
            ));
        }
        let a = parse_label_cell(cols[2], Task::A)?;
        let b = parse_label_cell(cols[3], Task::B)?;
        let c = parse_label_cell(cols[4], Task::C)?;
        let label = match task {
            Task::A => a,
            Task::B => b.filter(|_| a == Some(Label::Off)),
            Task::C => c.filter(|_| a == Some(Label::Off) && b == Some(Label::Tin)),
        };
        if let Some(label) = label {
            out.push(LabeledExample::new(cols[0].trim(), cols[1], label));
        }
    }
    Ok(out)
}

/// Load `id \t tweet` rows from a TSV with a header. Extra columns are
/// ignored, so OLID files and unlabeled test files both work.
pub fn load_texts(path: impl AsRef<Path>) -> Result<Vec<TweetRecord>> {
    let path = path.as_ref();
    let content = read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, raw) in content.lines().enumerate().skip(1) {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(id), Some(text)) = (cols.next(), cols.next()) else {
            return Err(malformed(path, idx + 1, "expected at least 2 columns"));
        };
        out.push(TweetRecord::new(id.trim(), text));
    }
    Ok(out)
}

/// Load the weakly-labeled corpus (`id text average std`). A header row is
/// accepted when present.
pub fn load_weak_corpus(path: impl AsRef<Path>) -> Result<Vec<TweetRecord>> {
    let path = path.as_ref();
    let content = read_to_string(path)?;
    parse_weak_corpus(path, &content)
}

pub(crate) fn parse_weak_corpus(path: &Path, content: &str) -> Result<Vec<TweetRecord>> {
    let mut out = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(malformed(path, line_no, format!("expected 4 columns, found {}", cols.len())));
        }
        if idx == 0 && cols[2].trim() == "average" {
            continue;
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| malformed(path, line_no, format!("cannot parse {what} `{s}`")))
        };
        let mean = parse(cols[2], "average")?;
        let spread = parse(cols[3], "std")?;
        if !(0.0..=1.0).contains(&mean) {
            return Err(Error::WeakMeanOutOfRange {
                line: line_no,
                value: mean,
            });
        }
        if !(spread >= 0.0) {
            return Err(Error::NegativeSpread {
                line: line_no,
                value: spread,
            });
        }
        out.push(TweetRecord {
            id: cols[0].trim().to_string(),
            text: cols[1].to_string(),
            weak: Some(WeakLabel { mean, spread }),
        });
    }
    Ok(out)
}

fn is_url(token: &str) -> bool {
    if token == "URL" {
        return true;
    }
    let lower = token.get(..8).map(str::to_ascii_lowercase).unwrap_or_default();
    lower.starts_with("http://") || lower.starts_with("https://")
}

fn is_mention(token: &str) -> bool {
    let mut chars = token.chars();
    chars.next() == Some('@') && chars.next().is_some_and(|c| c.is_alphanumeric() || c == '_')
}

/// Strip URLs and user mentions, collapse whitespace, trim.
pub fn normalize_tweet(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for token in text.split_whitespace() {
        if is_url(token) || is_mention(token) {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

/// Normalize every record and drop those that end up empty.
pub fn normalize_records(records: Vec<TweetRecord>) -> Vec<TweetRecord> {
    records
        .into_iter()
        .filter_map(|mut r| {
            r.text = normalize_tweet(&r.text);
            (!r.text.is_empty()).then_some(r)
        })
        .collect()
}

/// Remove exact duplicates on text, keeping the first occurrence.
pub fn deduplicate(records: Vec<TweetRecord>) -> Vec<TweetRecord> {
    let mut seen = HashSet::with_capacity(records.len());
    records.into_iter().filter(|r| seen.insert(r.text.clone())).collect()
}

/// Number of records [`sample_corpus`] keeps out of `n`.
pub fn sample_size(n: usize, fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    ((fraction * n as f64).round() as usize).clamp(1, n)
}

/// Uniform sample without replacement of `max(1, round(fraction * n))`
/// records, returned in their original relative order.
pub fn sample_corpus(records: &[TweetRecord], fraction: f64, seed: u64) -> Result<Vec<TweetRecord>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling fraction must be in (0, 1], got {fraction}"
        )));
    }
    let amount = sample_size(records.len(), fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, records.len(), amount).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| records[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub input: usize,
    pub non_empty: usize,
    pub deduplicated: usize,
    pub sampled: usize,
    pub fraction: f64,
    pub seed: u64,
}

/// normalize → drop empty → deduplicate → sample.
pub fn preprocess(
    records: Vec<TweetRecord>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<TweetRecord>, PreprocessStats)> {
    let input = records.len();
    let normalized = normalize_records(records);
    let non_empty = normalized.len();
    let unique = deduplicate(normalized);
    let deduplicated = unique.len();
    let sampled = sample_corpus(&unique, fraction, seed)?;
    let stats = PreprocessStats {
        input,
        non_empty,
        deduplicated,
        sampled: sampled.len(),
        fraction,
        seed,
    };
    Ok((sampled, stats))
}

/// Write one text per line, LF-terminated.
pub fn write_lines<'a>(path: impl AsRef<Path>, lines: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for line in lines {
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Read a processed corpus: one text per non-empty line.
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    Ok(read_to_string(path)?
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Assignment of every example id to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: BTreeMap<String, usize>,
}

impl FoldAssignment {
    /// Indices into the original example list, grouped by fold.
    pub fn fold_indices(&self, examples: &[LabeledExample]) -> Vec<Vec<usize>> {
        let mut folds = vec![Vec::new(); self.k];
        for (i, ex) in examples.iter().enumerate() {
            if let Some(&f) = self.fold_of.get(&ex.id) {
                folds[f].push(i);
            }
        }
        folds
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.fold_of.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

fn check_unique_ids(examples: &[LabeledExample]) -> Result<()> {
    let mut seen = HashSet::with_capacity(examples.len());
    for ex in examples {
        if !seen.insert(ex.id.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate example id `{}`", ex.id)));
        }
    }
    Ok(())
}

/// Seeded k-fold split. Fold sizes differ by at most one.
pub fn kfold_split(examples: &[LabeledExample], k: usize, seed: u64) -> Result<FoldAssignment> {
    split_impl(examples, k, seed, false)
}

/// Label-stratified variant of [`kfold_split`]: examples are dealt round-robin
/// label by label, so each fold sees roughly the global class balance.
pub fn kfold_split_stratified(examples: &[LabeledExample], k: usize, seed: u64) -> Result<FoldAssignment> {
    split_impl(examples, k, seed, true)
}

fn split_impl(examples: &[LabeledExample], k: usize, seed: u64, stratified: bool) -> Result<FoldAssignment> {
    if k == 0 || k > examples.len() {
        return Err(Error::InvalidArgument(format!(
            "k must be in [1, {}], got {k}",
            examples.len()
        )));
    }
    check_unique_ids(examples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    if stratified {
        let mut by_label: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
        for i in order {
            by_label.entry(examples[i].label).or_default().push(i);
        }
        order = by_label.into_values().flatten().collect();
    }
    let fold_of = order
        .into_iter()
        .enumerate()
        .map(|(pos, i)| (examples[i].id.clone(), pos % k))
        .collect();
    Ok(FoldAssignment { k, fold_of })
}

/// Check that two example lists share no ids.
pub fn ensure_disjoint(train: &[LabeledExample], valid: &[LabeledExample]) -> Result<()> {
    let ids: HashSet<&str> = train.iter().map(|e| e.id.as_str()).collect();
    let overlap: Vec<String> = valid
        .iter()
        .filter(|e| ids.contains(e.id.as_str()))
        .map(|e| e.id.clone())
        .collect();
    if overlap.is_empty() {
        Ok(())
    } else {
        Err(Error::IdOverlap(overlap))
    }
}

/// Per-label counts, in canonical order for `task`.
pub fn label_counts(examples: &[LabeledExample], task: Task) -> Vec<usize> {
    let index: HashMap<Label, usize> = task.labels().iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut counts = vec![0; task.num_labels()];
    for ex in examples {
        if let Some(&i) = index.get(&ex.label) {
            counts[i] += 1;
        }
    }
    counts
}
