//! Classification metrics, baselines, reports and confusion-matrix figures.
//!
//! Metric functions return fractions in `[0, 1]`; [`EvalReport`] stores
//! percentages, rounded to two decimals only when rendered.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::LabeledExample;
use crate::error::{Error, Result};
use crate::prediction::{write_csv, LabeledPredictions, PredictionRow, PredictionSet};
use crate::task::{Label, Task};

/// Rows are gold labels, columns predicted labels, both in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub task: Task,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn labels(&self) -> &'static [Label] {
        self.task.labels()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn from_counts(task: Task, counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = task.num_labels();
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument(format!("confusion matrix for task {task} must be {n}x{n}")));
        }
        Ok(ConfusionMatrix { task, counts })
    }
}

pub fn confusion_matrix(gold: &[Label], pred: &[Label], task: Task) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "gold has {} labels but predictions have {}",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty prediction list".into()));
    }
    let n = task.num_labels();
    let mut counts = vec![vec![0u64; n]; n];
    for (&g, &p) in gold.iter().zip(pred) {
        counts[task.require_index(g)?][task.require_index(p)?] += 1;
    }
    Ok(ConfusionMatrix { task, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: Label,
    /// `None` when the class was never predicted.
    pub precision: Option<f64>,
    /// `None` when the class never occurs in the gold labels.
    pub recall: Option<f64>,
    /// Zero whenever precision or recall is undefined or both are zero.
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn per_class_prf(matrix: &ConfusionMatrix) -> Vec<ClassScores> {
    let n = matrix.counts.len();
    (0..n)
        .map(|c| {
            let tp = matrix.counts[c][c];
            let predicted: u64 = (0..n).map(|g| matrix.counts[g][c]).sum();
            let actual: u64 = matrix.counts[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            let f1 = match (precision, recall) {
                (Some(p), Some(r)) if p + r > 0.0 => 2.0 * p * r / (p + r),
                _ => 0.0,
            };
            ClassScores {
                label: matrix.labels()[c],
                precision,
                recall,
                f1,
            }
        })
        .collect()
}

/// Unweighted mean of per-class F1 over every label of the task.
pub fn macro_f1(matrix: &ConfusionMatrix) -> f64 {
    let scores = per_class_prf(matrix);
    scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64
}

pub fn accuracy(matrix: &ConfusionMatrix) -> f64 {
    let trace: u64 = (0..matrix.counts.len()).map(|i| matrix.counts[i][i]).sum();
    trace as f64 / matrix.total() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineStrategy {
    AllNot,
    AllOff,
    MajorityClass,
}

impl BaselineStrategy {
    pub fn name(self) -> &'static str {
        match self {
            BaselineStrategy::AllNot => "All NOT",
            BaselineStrategy::AllOff => "All OFF",
            BaselineStrategy::MajorityClass => "Majority class",
        }
    }
}

/// Constant predictor with a one-hot probability vector.
pub fn baseline_predict(strategy: BaselineStrategy, gold: &[LabeledExample], task: Task) -> Result<PredictionSet> {
    if gold.is_empty() {
        return Err(Error::InvalidArgument("baseline needs at least one gold example".into()));
    }
    let label = match strategy {
        BaselineStrategy::AllNot | BaselineStrategy::AllOff if task != Task::A => {
            return Err(Error::InvalidArgument(format!(
                "{} is only defined for task A; use majority_class",
                strategy.name()
            )))
        }
        BaselineStrategy::AllNot => Label::Not,
        BaselineStrategy::AllOff => Label::Off,
        BaselineStrategy::MajorityClass => {
            let counts = crate::corpus::label_counts(gold, task);
            let best = (1..counts.len()).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
            task.labels()[best]
        }
    };
    let idx = task.require_index(label)?;
    let mut probs = vec![0.0; task.num_labels()];
    probs[idx] = 1.0;
    Ok(PredictionSet {
        model_name: strategy.name().to_string(),
        task,
        rows: gold
            .iter()
            .map(|g| PredictionRow {
                id: g.id.clone(),
                label,
                probs: Some(probs.clone()),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub label: Label,
    /// Percentages; `None` marks an undefined precision or recall.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub per_class: Vec<ClassReport>,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub matrix: ConfusionMatrix,
    pub false_positives: Vec<ErrorSample>,
    pub false_negatives: Vec<ErrorSample>,
}

pub const DEFAULT_ERROR_SAMPLES: usize = 4;

fn id_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

/// Evaluate predictions against gold examples (matched by id).
pub fn build_report<P: LabeledPredictions + ?Sized>(
    gold: &[LabeledExample],
    predictions: &P,
    task: Task,
    samples: usize,
) -> Result<EvalReport> {
    if predictions.task() != task {
        return Err(Error::InvalidArgument(format!(
            "predictions are for task {} but gold is task {task}",
            predictions.task()
        )));
    }
    let predicted: HashMap<&str, Label> = predictions.predicted().into_iter().collect();
    let gold_ids: BTreeSet<&str> = gold.iter().map(|g| g.id.as_str()).collect();
    let pred_ids: BTreeSet<&str> = predicted.keys().copied().collect();
    if gold_ids != pred_ids {
        return Err(Error::IdMismatch {
            missing: gold_ids.difference(&pred_ids).map(|s| s.to_string()).collect(),
            unexpected: pred_ids.difference(&gold_ids).map(|s| s.to_string()).collect(),
        });
    }

    let gold_labels: Vec<Label> = gold.iter().map(|g| g.label).collect();
    let pred_labels: Vec<Label> = gold.iter().map(|g| predicted[g.id.as_str()]).collect();
    let matrix = confusion_matrix(&gold_labels, &pred_labels, task)?;
    let per_class = per_class_prf(&matrix)
        .into_iter()
        .map(|s| ClassReport {
            label: s.label,
            precision: s.precision.map(|p| 100.0 * p),
            recall: s.recall.map(|r| 100.0 * r),
            f1: 100.0 * s.f1,
        })
        .collect();

    let (mut fps, mut fns) = (Vec::new(), Vec::new());
    if let Some(pos) = task.positive_label() {
        let mut sorted: Vec<&LabeledExample> = gold.iter().collect();
        sorted.sort_by(|a, b| id_order(&a.id, &b.id));
        for g in sorted {
            let p = predicted[g.id.as_str()];
            let sample = || ErrorSample {
                id: g.id.clone(),
                text: g.text.clone(),
            };
            if p == pos && g.label != pos && fps.len() < samples {
                fps.push(sample());
            } else if p != pos && g.label == pos && fns.len() < samples {
                fns.push(sample());
            }
        }
    }

    Ok(EvalReport {
        task,
        per_class,
        macro_f1: 100.0 * macro_f1(&matrix),
        accuracy: 100.0 * accuracy(&matrix),
        matrix,
        false_positives: fps,
        false_negatives: fns,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

/// Plain-text table with one row per named report: per-class P/R/F1, then
/// macro F1 and accuracy.
pub fn render_table(rows: &[(&str, &EvalReport)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let labels = first.task.labels();
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = write!(out, "{:<name_w$}", "");
    for l in labels {
        let _ = write!(out, " | {:^23}", l.as_str());
    }
    let _ = writeln!(out, " | {:>8} | {:>7}", "", "");
    let _ = write!(out, "{:<name_w$}", "Model");
    for _ in labels {
        let _ = write!(out, " | {:>7}{:>8}{:>8}", "P", "R", "F1");
    }
    let _ = writeln!(out, " | {:>8} | {:>7}", "Macro F1", "Acc.");
    let width = out.lines().last().map_or(0, str::len);
    let _ = writeln!(out, "{}", "-".repeat(width));
    for (name, report) in rows {
        let _ = write!(out, "{name:<name_w$}");
        for c in &report.per_class {
            let _ = write!(out, " | {:>7}{:>8}{:>8}", pct(c.precision), pct(c.recall), format!("{:.2}", c.f1));
        }
        let _ = writeln!(out, " | {:>8.2} | {:>7.2}", report.macro_f1, report.accuracy);
    }
    out
}

impl EvalReport {
    pub fn render(&self) -> String {
        self.render_named("predictions")
    }

    /// Table row, confusion matrix and error samples.
    pub fn render_named(&self, name: &str) -> String {
        let mut out = render_table(&[(name, self)]);
        let _ = writeln!(out, "\nconfusion matrix (rows gold, columns predicted)");
        out.push_str(&render_matrix(&self.matrix));
        for (title, samples) in [("false positives", &self.false_positives), ("false negatives", &self.false_negatives)] {
            if !samples.is_empty() {
                let _ = writeln!(out, "\n{title}:");
                for s in samples {
                    let _ = writeln!(out, "  {}\t{}", s.id, s.text);
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn render_matrix(m: &ConfusionMatrix) -> String {
    let mut out = format!("{:>6}", "");
    for l in m.labels() {
        let _ = write!(out, "{:>8}", l.as_str());
    }
    out.push('\n');
    for (l, row) in m.labels().iter().zip(&m.counts) {
        let _ = write!(out, "{:>6}", l.as_str());
        for c in row {
            let _ = write!(out, "{c:>8}");
        }
        out.push('\n');
    }
    out
}

pub fn write_confusion_csv(matrix: &ConfusionMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut header = vec!["gold\\pred".to_string()];
    header.extend(matrix.labels().iter().map(|l| l.to_string()));
    write_csv(
        path.as_ref(),
        Some(header),
        matrix.labels().iter().zip(&matrix.counts).map(|(l, row)| {
            let mut rec = vec![l.to_string()];
            rec.extend(row.iter().map(|c| c.to_string()));
            rec
        }),
    )
}

pub fn read_confusion_csv(path: impl AsRef<Path>, task: Task) -> Result<ConfusionMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, msg: &str| Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        message: msg.to_string(),
    };
    let counts = text
        .lines()
        .enumerate()
        .skip(1)
        .map(|(i, line)| {
            line.split(',')
                .skip(1)
                .map(|c| c.parse::<u64>().map_err(|_| bad(i + 1, "bad count")))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    ConfusionMatrix::from_counts(task, counts)
}

/// Write the matrix as an annotated SVG heatmap at `path` (shaded by row
/// share) and as CSV next to it; returns the CSV path.
pub fn render_confusion_figure(matrix: &ConfusionMatrix, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    let n = matrix.counts.len();
    let cell = 80;
    let margin = 70;
    let size = margin + n * cell + 10;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="14">"#
    );
    let _ = writeln!(svg, r#"<rect width="{size}" height="{size}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="14" text-anchor="middle">predicted</text>"#,
        margin + n * cell / 2
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">gold</text>"#,
        margin + n * cell / 2
    );
    for (i, label) in matrix.labels().iter().enumerate() {
        let center = margin + i * cell + cell / 2;
        let _ = writeln!(svg, r#"<text x="{center}" y="{}" text-anchor="middle">{label}</text>"#, margin - 12);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{label}</text>"#, margin - 8, center + 5);
    }
    for (g, row) in matrix.counts.iter().enumerate() {
        let row_total: u64 = row.iter().sum();
        for (p, &count) in row.iter().enumerate() {
            let share = if row_total == 0 { 0.0 } else { count as f64 / row_total as f64 };
            let shade = (255.0 * (1.0 - 0.8 * share)).round() as u8;
            let (x, y) = (margin + p * cell, margin + g * cell);
            let _ = writeln!(
                svg,
                r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="black"/>"#
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle">{count}</text>"#,
                x + cell / 2,
                y + cell / 2 + 5
            );
        }
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg).map_err(|e| Error::io(path, e))?;
    let csv_path = path.with_extension("csv");
    write_confusion_csv(matrix, &csv_path)?;
    Ok(csv_path)
}
