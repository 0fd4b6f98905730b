//! Per-model predictions and their CSV forms.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{Label, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub label: Label,
    /// Class probabilities in canonical label order; absent for label-only
    /// files.
    pub probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub model_name: String,
    pub task: Task,
    pub rows: Vec<PredictionRow>,
}

/// Index of the largest value; ties go to the earliest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Id → label view shared by prediction sets and ensemble results.
pub trait LabeledPredictions {
    fn task(&self) -> Task;
    fn predicted(&self) -> Vec<(&str, Label)>;
}

impl LabeledPredictions for PredictionSet {
    fn task(&self) -> Task {
        self.task
    }

    fn predicted(&self) -> Vec<(&str, Label)> {
        self.rows.iter().map(|r| (r.id.as_str(), r.label)).collect()
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

pub fn write_csv(path: &Path, header: Option<Vec<String>>, rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    if let Some(h) = header {
        w.write_record(&h).map_err(|e| csv_err(path, e))?;
    }
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parsed `id,label[,…]` file. Columns are located by header name; a file
/// whose first record does not start with `id` is treated as headerless
/// `id,label`.
pub(crate) struct LabelTable {
    pub header: Vec<String>,
    pub rows: Vec<csv::StringRecord>,
    pub id_col: usize,
    pub label_col: usize,
}

pub(crate) fn read_label_table(path: &Path) -> Result<LabelTable> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes.as_slice());
    let mut records = r.records();
    let first = match records.next() {
        Some(rec) => rec.map_err(|e| csv_err(path, e))?,
        None => {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line: 1,
                message: "empty prediction file".into(),
            })
        }
    };
    let mut rows = Vec::new();
    let header: Vec<String> = if first.get(0) == Some("id") {
        first.iter().map(str::to_string).collect()
    } else {
        rows.push(first);
        vec!["id".into(), "label".into()]
    };
    for rec in records {
        rows.push(rec.map_err(|e| csv_err(path, e))?);
    }
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::MalformedRow {
            path: path.to_path_buf(),
            line: 1,
            message: format!("missing `{name}` column"),
        })
    };
    Ok(LabelTable {
        id_col: find("id")?,
        label_col: find("label")?,
        header,
        rows,
    })
}

/// `(id, label)` pairs from any prediction, ensemble or submission file.
pub fn read_labels(path: impl AsRef<Path>, task: Task) -> Result<Vec<(String, Label)>> {
    let path = path.as_ref();
    let table = read_label_table(path)?;
    table
        .rows
        .iter()
        .map(|rec| {
            let label: Label = rec[table.label_col].parse()?;
            task.require_index(label)?;
            Ok((rec[table.id_col].to_string(), label))
        })
        .collect()
}

impl PredictionSet {
    pub fn header(task: Task) -> Vec<String> {
        let mut h = vec!["id".to_string(), "label".to_string()];
        h.extend(task.labels().iter().map(|l| format!("p_{l}")));
        h
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let n = self.task.num_labels();
        write_csv(
            path.as_ref(),
            Some(Self::header(self.task)),
            self.rows.iter().map(|r| {
                let mut rec = vec![r.id.clone(), r.label.to_string()];
                match &r.probs {
                    Some(p) => rec.extend(p.iter().map(|v| v.to_string())),
                    None => rec.extend(std::iter::repeat_n(String::new(), n)),
                }
                rec
            }),
        )
    }

    /// Read a prediction file. Probability columns are optional; when
    /// present they must cover every label of `task`.
    pub fn read_csv(path: impl AsRef<Path>, task: Task) -> Result<PredictionSet> {
        let path = path.as_ref();
        let table = read_label_table(path)?;
        let cols: HashMap<&str, usize> = table.header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
        let prob_cols: Option<Vec<usize>> = task
            .labels()
            .iter()
            .map(|l| cols.get(format!("p_{l}").as_str()).copied())
            .collect();
        let mut rows = Vec::with_capacity(table.rows.len());
        for (i, rec) in table.rows.iter().enumerate() {
            let label: Label = rec[table.label_col].parse()?;
            task.require_index(label)?;
            let probs = match &prob_cols {
                Some(pc) if pc.iter().all(|&c| !rec[c].is_empty()) => Some(
                    pc.iter()
                        .map(|&c| {
                            rec[c].parse::<f64>().map_err(|_| Error::MalformedRow {
                                path: path.to_path_buf(),
                                line: i + 2,
                                message: format!("bad probability `{}`", &rec[c]),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?,
                ),
                _ => None,
            };
            rows.push(PredictionRow {
                id: rec[table.id_col].to_string(),
                label,
                probs,
            });
        }
        let model_name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(PredictionSet { model_name, task, rows })
    }

    pub fn from_probabilities(model_name: impl Into<String>, task: Task, rows: Vec<(String, Vec<f64>)>) -> Self {
        let rows = rows
            .into_iter()
            .map(|(id, probs)| PredictionRow {
                id,
                label: task.labels()[argmax(&probs)],
                probs: Some(probs),
            })
            .collect();
        PredictionSet {
            model_name: model_name.into(),
            task,
            rows,
        }
    }

    pub fn ids(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.id.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_earlier_on_tie() {
        assert_eq!(argmax(&[0.2, 0.8]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.3, 0.4, 0.4]), 1);
    }

    #[test]
    fn from_probabilities_labels_by_argmax() {
        let set = PredictionSet::from_probabilities(
            "m",
            Task::A,
            vec![("1".into(), vec![0.2, 0.8]), ("2".into(), vec![0.5, 0.5])],
        );
        assert_eq!(set.rows[0].label, Label::Off);
        assert_eq!(set.rows[1].label, Label::Not);
    }

    #[test]
    fn csv_round_trip_and_label_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let set = PredictionSet::from_probabilities(
            "p",
            Task::C,
            vec![("a".into(), vec![0.1, 0.7, 0.2]), ("b".into(), vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])],
        );
        set.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,label,p_GRP,p_IND,p_OTH\n"));
        assert_eq!(PredictionSet::read_csv(&path, Task::C).unwrap(), set);

        let sub = dir.path().join("s.csv");
        std::fs::write(&sub, "a,IND\nb,GRP\n").unwrap();
        let labels = read_labels(&sub, Task::C).unwrap();
        assert_eq!(labels, vec![("a".to_string(), Label::Ind), ("b".to_string(), Label::Grp)]);
        let only = PredictionSet::read_csv(&sub, Task::C).unwrap();
        assert!(only.rows.iter().all(|r| r.probs.is_none()));
        assert!(read_labels(&sub, Task::A).is_err());
    }
}
