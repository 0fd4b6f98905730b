//! OLID sub-tasks and their label sets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every label appearing in any OLID sub-task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Not,
    Off,
    Tin,
    Unt,
    Grp,
    Ind,
    Oth,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Not => "NOT",
            Label::Off => "OFF",
            Label::Tin => "TIN",
            Label::Unt => "UNT",
            Label::Grp => "GRP",
            Label::Ind => "IND",
            Label::Oth => "OTH",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "NOT" => Label::Not,
            "OFF" => Label::Off,
            "TIN" => Label::Tin,
            "UNT" => Label::Unt,
            "GRP" => Label::Grp,
            "IND" => Label::Ind,
            "OTH" => Label::Oth,
            other => return Err(Error::UnknownLabel(other.to_string())),
        })
    }
}

/// One of the three hierarchical sub-tasks. The label order returned by
/// [`Task::labels`] is the axis order of every probability vector and
/// confusion matrix in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    A,
    B,
    C,
}

const TASK_A: [Label; 2] = [Label::Not, Label::Off];
const TASK_B: [Label; 2] = [Label::Tin, Label::Unt];
const TASK_C: [Label; 3] = [Label::Grp, Label::Ind, Label::Oth];

impl Task {
    pub const ALL: [Task; 3] = [Task::A, Task::B, Task::C];

    pub fn labels(self) -> &'static [Label] {
        match self {
            Task::A => &TASK_A,
            Task::B => &TASK_B,
            Task::C => &TASK_C,
        }
    }

    pub fn num_labels(self) -> usize {
        self.labels().len()
    }

    pub fn index_of(self, label: Label) -> Option<usize> {
        self.labels().iter().position(|&l| l == label)
    }

    /// Index of `label`, or an error if the label belongs to another task.
    pub fn require_index(self, label: Label) -> Result<usize> {
        self.index_of(label).ok_or_else(|| {
            Error::InvalidArgument(format!("label {label} is not part of task {}", self.letter()))
        })
    }

    pub fn letter(self) -> char {
        match self {
            Task::A => 'A',
            Task::B => 'B',
            Task::C => 'C',
        }
    }

    /// The "positive" class used for FP/FN sampling on two-label tasks.
    pub fn positive_label(self) -> Option<Label> {
        match self {
            Task::A => Some(Label::Off),
            Task::B => Some(Label::Unt),
            Task::C => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" | "SUBTASK_A" => Ok(Task::A),
            "B" | "SUBTASK_B" => Ok(Task::B),
            "C" | "SUBTASK_C" => Ok(Task::C),
            _ => Err(Error::InvalidArgument(format!("unknown task `{s}` (expected A, B or C)"))),
        }
    }
}

/// Anything with an id and a text that can be fed to a classifier.
pub trait TextItem {
    fn id(&self) -> &str;
    fn text(&self) -> &str;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_sets_are_canonical() {
        assert_eq!(Task::A.labels(), &[Label::Not, Label::Off]);
        assert_eq!(Task::B.labels(), &[Label::Tin, Label::Unt]);
        assert_eq!(Task::C.labels(), &[Label::Grp, Label::Ind, Label::Oth]);
    }

    #[test]
    fn labels_parse_and_print() {
        for task in Task::ALL {
            for &label in task.labels() {
                assert_eq!(label.as_str().parse::<Label>().unwrap(), label);
            }
        }
        let err = "MAYBE".parse::<Label>().unwrap_err();
        assert!(err.to_string().contains("MAYBE"));
    }

    #[test]
    fn foreign_label_rejected() {
        assert!(Task::A.require_index(Label::Grp).is_err());
        assert_eq!(Task::C.require_index(Label::Oth).unwrap(), 2);
    }
}
