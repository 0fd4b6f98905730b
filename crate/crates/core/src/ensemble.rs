//! Hard (plurality) and soft (probability-averaging) voting over prediction
//! sets that cover the same ids.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prediction::{argmax, write_csv, LabeledPredictions, PredictionRow, PredictionSet};
use crate::task::{Label, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Highest mean probability among the tied labels; canonical order when
    /// probabilities are unavailable.
    SoftFallback,
    /// Earliest tied label in canonical order.
    CanonicalOrder,
}

/// Default mode for `n` members: plurality voting is degenerate with two
/// members, so pairs are averaged.
pub fn default_mode(members: usize) -> VoteMode {
    if members == 2 {
        VoteMode::Soft
    } else {
        VoteMode::Hard
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleSpec<'a> {
    members: &'a [PredictionSet],
    pub mode: VoteMode,
    pub tie_rule: TieRule,
    /// Row index of every id in each member.
    index: Vec<HashMap<&'a str, usize>>,
}

impl<'a> EnsembleSpec<'a> {
    /// Validate that there are at least two members over the same task and
    /// exactly the same ids.
    pub fn new(members: &'a [PredictionSet], mode: VoteMode, tie_rule: TieRule) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "an ensemble needs at least 2 members, got {}",
                members.len()
            )));
        }
        let task = members[0].task;
        let mut index = Vec::with_capacity(members.len());
        for m in members {
            if m.task != task {
                return Err(Error::InvalidArgument(format!(
                    "member `{}` is for task {} but `{}` is for task {task}",
                    m.model_name, m.task, members[0].model_name
                )));
            }
            let map: HashMap<&str, usize> = m.rows.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
            if map.len() != m.rows.len() {
                return Err(Error::InvalidArgument(format!("member `{}` has duplicate ids", m.model_name)));
            }
            index.push(map);
        }
        let reference: BTreeSet<&str> = index[0].keys().copied().collect();
        for map in &index[1..] {
            let ids: BTreeSet<&str> = map.keys().copied().collect();
            if ids != reference {
                return Err(Error::IdMismatch {
                    missing: reference.difference(&ids).map(|s| s.to_string()).collect(),
                    unexpected: ids.difference(&reference).map(|s| s.to_string()).collect(),
                });
            }
        }
        Ok(EnsembleSpec {
            members,
            mode,
            tie_rule,
            index,
        })
    }

    pub fn task(&self) -> Task {
        self.members[0].task
    }

    pub fn members(&self) -> &[PredictionSet] {
        self.members
    }

    pub fn digest(&self) -> String {
        let names: Vec<&str> = self.members.iter().map(|m| m.model_name.as_str()).collect();
        format!(
            "mode={} tie_rule={} members={} [{}]",
            match self.mode {
                VoteMode::Hard => "hard",
                VoteMode::Soft => "soft",
            },
            match self.tie_rule {
                TieRule::SoftFallback => "soft_fallback",
                TieRule::CanonicalOrder => "canonical_order",
            },
            names.len(),
            names.join(", ")
        )
    }

    /// Run whichever vote `mode` selects.
    pub fn run(&self) -> Result<EnsembleResult> {
        match self.mode {
            VoteMode::Hard => hard_vote(self),
            VoteMode::Soft => soft_vote(self),
        }
    }

    /// Member rows for the id at position `i` of the first member.
    fn rows_at(&self, i: usize) -> Vec<&'a PredictionRow> {
        let id = self.members[0].rows[i].id.as_str();
        self.members
            .iter()
            .zip(&self.index)
            .map(|(m, idx)| &m.rows[idx[id]])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRow {
    pub id: String,
    pub label: Label,
    /// Set when the winning label was chosen by the tie rule.
    pub tie_flag: bool,
    /// Votes per label, canonical order.
    pub votes: Vec<usize>,
    /// Mean member probability vector, when every member has one.
    pub mean_probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub task: Task,
    pub rows: Vec<EnsembleRow>,
    pub spec_digest: String,
}

impl LabeledPredictions for EnsembleResult {
    fn task(&self) -> Task {
        self.task
    }

    fn predicted(&self) -> Vec<(&str, Label)> {
        self.rows.iter().map(|r| (r.id.as_str(), r.label)).collect()
    }
}

fn tally(task: Task, rows: &[&PredictionRow]) -> Result<(Vec<usize>, Option<Vec<f64>>)> {
    let n = task.num_labels();
    let mut votes = vec![0; n];
    for r in rows {
        votes[task.require_index(r.label)?] += 1;
    }
    let mean = if rows.iter().all(|r| r.probs.is_some()) {
        let mut sum = vec![0.0; n];
        for r in rows {
            let p = r.probs.as_ref().expect("checked");
            if p.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "row `{}` has {} probabilities for {n} labels",
                    r.id,
                    p.len()
                )));
            }
            sum.iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        Some(sum.into_iter().map(|s| s / rows.len() as f64).collect())
    } else {
        None
    };
    Ok((votes, mean))
}

/// Plurality vote per id; ties are resolved by `spec.tie_rule` and flagged.
pub fn hard_vote(spec: &EnsembleSpec<'_>) -> Result<EnsembleResult> {
    let task = spec.task();
    let mut rows = Vec::with_capacity(spec.members[0].rows.len());
    for i in 0..spec.members[0].rows.len() {
        let member_rows = spec.rows_at(i);
        let (votes, mean) = tally(task, &member_rows)?;
        let top = *votes.iter().max().expect("non-empty label set");
        let tied: Vec<usize> = (0..votes.len()).filter(|&l| votes[l] == top).collect();
        let winner = match (tied.len(), spec.tie_rule, &mean) {
            (1, _, _) => tied[0],
            (_, TieRule::SoftFallback, Some(mean)) => {
                tied.iter().copied().fold(tied[0], |b, l| if mean[l] > mean[b] { l } else { b })
            }
            _ => tied[0],
        };
        rows.push(EnsembleRow {
            id: member_rows[0].id.clone(),
            label: task.labels()[winner],
            tie_flag: tied.len() > 1,
            votes,
            mean_probs: mean,
        });
    }
    Ok(EnsembleResult {
        task,
        rows,
        spec_digest: spec.digest(),
    })
}

/// Argmax of the mean probability vector per id (canonical order on ties).
pub fn soft_vote(spec: &EnsembleSpec<'_>) -> Result<EnsembleResult> {
    let task = spec.task();
    let mut rows = Vec::with_capacity(spec.members[0].rows.len());
    for i in 0..spec.members[0].rows.len() {
        let member_rows = spec.rows_at(i);
        let (votes, mean) = tally(task, &member_rows)?;
        let mean = mean.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "soft voting needs probabilities for every member (id `{}`)",
                member_rows[0].id
            ))
        })?;
        let winner = argmax(&mean);
        let tie_flag = mean.iter().filter(|&&p| p == mean[winner]).count() > 1;
        rows.push(EnsembleRow {
            id: member_rows[0].id.clone(),
            label: task.labels()[winner],
            tie_flag,
            votes,
            mean_probs: Some(mean),
        });
    }
    Ok(EnsembleResult {
        task,
        rows,
        spec_digest: spec.digest(),
    })
}

/// Majority vote over k cross-validation prediction sets, ties broken by
/// mean probability.
pub fn cv_ensemble(prediction_sets: &[PredictionSet]) -> Result<EnsembleResult> {
    let spec = EnsembleSpec::new(prediction_sets, VoteMode::Hard, TieRule::SoftFallback)?;
    let mut result = hard_vote(&spec)?;
    let names: Vec<&str> = prediction_sets.iter().map(|p| p.model_name.as_str()).collect();
    result.spec_digest = format!(
        "cv-ensemble k={} mode=hard tie_rule=soft_fallback folds=[{}]",
        prediction_sets.len(),
        names.join(", ")
    );
    Ok(result)
}

impl EnsembleResult {
    pub fn header(task: Task) -> Vec<String> {
        let mut h = vec!["id".to_string(), "label".to_string(), "tie_flag".to_string()];
        h.extend(task.labels().iter().map(|l| format!("votes_{l}")));
        h.extend(task.labels().iter().map(|l| format!("mean_p_{l}")));
        h
    }

    /// `id,label,tie_flag,votes_<label…>,mean_p_<label…>`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let n = self.task.num_labels();
        write_csv(
            path.as_ref(),
            Some(Self::header(self.task)),
            self.rows.iter().map(|r| {
                let mut rec = vec![r.id.clone(), r.label.to_string(), u8::from(r.tie_flag).to_string()];
                rec.extend(r.votes.iter().map(|v| v.to_string()));
                match &r.mean_probs {
                    Some(p) => rec.extend(p.iter().map(|v| v.to_string())),
                    None => rec.extend(std::iter::repeat_n(String::new(), n)),
                }
                rec
            }),
        )
    }

    /// Headerless `id,label` submission file.
    pub fn write_submission(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(
            path.as_ref(),
            None,
            self.rows.iter().map(|r| vec![r.id.clone(), r.label.to_string()]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Not as N, Off as O};

    fn member(name: &str, rows: &[(&str, Label, Option<[f64; 2]>)]) -> PredictionSet {
        PredictionSet {
            model_name: name.into(),
            task: Task::A,
            rows: rows
                .iter()
                .map(|(id, l, p)| PredictionRow {
                    id: id.to_string(),
                    label: *l,
                    probs: p.map(|p| p.to_vec()),
                })
                .collect(),
        }
    }

    fn single(labels: &[Label]) -> Vec<PredictionSet> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| member(&format!("m{i}"), &[("x", l, None)]))
            .collect()
    }

    #[test]
    fn strict_majority() {
        let sets = single(&[O, O, N]);
        let spec = EnsembleSpec::new(&sets, VoteMode::Hard, TieRule::SoftFallback).unwrap();
        let r = hard_vote(&spec).unwrap();
        assert_eq!(r.rows[0].label, O);
        assert_eq!(r.rows[0].votes, vec![1, 2]);
        assert!(!r.rows[0].tie_flag);
    }

    #[test]
    fn soft_fallback_tie() {
        // Mean probabilities: NOT 0.55, OFF 0.61 (vectors need not be from
        // the same member's argmax).
        let sets = vec![
            member("a", &[("x", O, Some([0.3, 0.7]))]),
            member("b", &[("x", N, Some([0.8, 0.52]))]),
        ];
        let spec = EnsembleSpec::new(&sets, VoteMode::Hard, TieRule::SoftFallback).unwrap();
        let r = hard_vote(&spec).unwrap();
        let mean = r.rows[0].mean_probs.clone().unwrap();
        assert!((mean[0] - 0.55).abs() < 1e-12 && (mean[1] - 0.61).abs() < 1e-12);
        assert_eq!(r.rows[0].label, O);
        assert!(r.rows[0].tie_flag);

        let spec = EnsembleSpec::new(&sets, VoteMode::Hard, TieRule::CanonicalOrder).unwrap();
        assert_eq!(hard_vote(&spec).unwrap().rows[0].label, N);
    }

    #[test]
    fn soft_fallback_without_probabilities_uses_canonical_order() {
        let sets = single(&[O, N]);
        let spec = EnsembleSpec::new(&sets, VoteMode::Hard, TieRule::SoftFallback).unwrap();
        let r = hard_vote(&spec).unwrap();
        assert_eq!(r.rows[0].label, N);
        assert!(r.rows[0].tie_flag);
        assert!(r.rows[0].mean_probs.is_none());
    }

    #[test]
    fn soft_mean() {
        let sets = vec![
            member("a", &[("x", O, Some([0.4, 0.6]))]),
            member("b", &[("x", O, Some([0.2, 0.8]))]),
        ];
        let spec = EnsembleSpec::new(&sets, VoteMode::Soft, TieRule::SoftFallback).unwrap();
        let r = soft_vote(&spec).unwrap();
        assert!((r.rows[0].mean_probs.as_ref().unwrap()[1] - 0.7).abs() < 1e-12);
        assert_eq!(r.rows[0].label, O);
    }

    #[test]
    fn soft_identical_members() {
        let sets = vec![
            member("a", &[("x", N, Some([0.9, 0.1])), ("y", O, Some([0.3, 0.7]))]),
            member("b", &[("x", N, Some([0.9, 0.1])), ("y", O, Some([0.3, 0.7]))]),
        ];
        let spec = EnsembleSpec::new(&sets, VoteMode::Soft, TieRule::SoftFallback).unwrap();
        let r = soft_vote(&spec).unwrap();
        assert_eq!(r.predicted(), sets[0].predicted());
    }

    #[test]
    fn soft_and_hard_diverge() {
        // A: NOT at 0.51; B: OFF at 0.99. Mean OFF = (0.49 + 0.99) / 2 = 0.74.
        let sets = vec![
            member("a", &[("x", N, Some([0.51, 0.49]))]),
            member("b", &[("x", O, Some([0.01, 0.99]))]),
        ];
        let soft = EnsembleSpec::new(&sets, VoteMode::Soft, TieRule::CanonicalOrder).unwrap().run().unwrap();
        assert_eq!(soft.rows[0].label, O);
        assert!((soft.rows[0].mean_probs.as_ref().unwrap()[1] - 0.74).abs() < 1e-12);
        let hard = EnsembleSpec::new(&sets, VoteMode::Hard, TieRule::CanonicalOrder).unwrap().run().unwrap();
        assert!(hard.rows[0].tie_flag);
        assert_eq!(hard.rows[0].votes, vec![1, 1]);
    }

    #[test]
    fn soft_requires_probabilities() {
        let sets = single(&[O, N]);
        assert!(EnsembleSpec::new(&sets, VoteMode::Soft, TieRule::SoftFallback).unwrap().run().is_err());
    }

    #[test]
    fn membership_errors() {
        let one = single(&[O]);
        assert!(EnsembleSpec::new(&one, VoteMode::Hard, TieRule::SoftFallback).is_err());
        let sets = vec![
            member("a", &[("x", N, None), ("y", N, None)]),
            member("b", &[("x", N, None), ("z", N, None)]),
        ];
        match EnsembleSpec::new(&sets, VoteMode::Hard, TieRule::SoftFallback) {
            Err(Error::IdMismatch { missing, unexpected }) => {
                assert_eq!(missing, vec!["y"]);
                assert_eq!(unexpected, vec!["z"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn member_order_of_ids_may_differ() {
        let sets = vec![
            member("a", &[("x", N, None), ("y", O, None)]),
            member("b", &[("y", O, None), ("x", N, None)]),
            member("c", &[("y", N, None), ("x", N, None)]),
        ];
        let r = EnsembleSpec::new(&sets, VoteMode::Hard, TieRule::SoftFallback).unwrap().run().unwrap();
        assert_eq!(r.predicted(), vec![("x", N), ("y", O)]);
    }

    #[test]
    fn cv_majority_and_ties() {
        let mut labels = vec![O; 7];
        labels.extend([N; 3]);
        let r = cv_ensemble(&single(&labels)).unwrap();
        assert_eq!(r.rows[0].label, O);
        assert!(r.spec_digest.contains("k=10"));

        // 5/5 split with mean p(OFF) = 0.52.
        let sets: Vec<_> = (0..10)
            .map(|i| {
                let (l, p) = if i < 5 { (O, [0.3, 0.7]) } else { (N, [0.66, 0.34]) };
                member(&format!("fold{i}"), &[("x", l, Some(p))])
            })
            .collect();
        let r = cv_ensemble(&sets).unwrap();
        assert!((r.rows[0].mean_probs.as_ref().unwrap()[1] - 0.52).abs() < 1e-12);
        assert_eq!(r.rows[0].label, O);
        assert!(r.rows[0].tie_flag);
    }

    #[test]
    fn unanimous_equals_member() {
        let sets: Vec<_> = (0..4)
            .map(|i| member(&format!("m{i}"), &[("x", N, None), ("y", O, None), ("z", O, None)]))
            .collect();
        assert_eq!(cv_ensemble(&sets).unwrap().predicted(), sets[0].predicted());
    }

    #[test]
    fn csv_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let sets = vec![
            member("a", &[("1", N, Some([0.6, 0.4])), ("2", O, Some([0.2, 0.8]))]),
            member("b", &[("1", O, Some([0.4, 0.6])), ("2", O, Some([0.1, 0.9]))]),
        ];
        let r = EnsembleSpec::new(&sets, VoteMode::Hard, TieRule::SoftFallback).unwrap().run().unwrap();
        let path = dir.path().join("e.csv");
        r.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "id,label,tie_flag,votes_NOT,votes_OFF,mean_p_NOT,mean_p_OFF");
        assert_eq!(text.lines().nth(1).unwrap(), "1,NOT,1,1,1,0.5,0.5");
        let sub = dir.path().join("s.csv");
        r.write_submission(&sub).unwrap();
        assert_eq!(std::fs::read_to_string(&sub).unwrap(), "1,NOT\n2,OFF\n");
        let labels = crate::prediction::read_labels(&path, Task::A).unwrap();
        assert_eq!(labels[1], ("2".to_string(), O));
    }
}
