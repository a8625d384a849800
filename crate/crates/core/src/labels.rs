//! Task definitions and per-example ground truth.
//!
//! Every task carries an explicit `neutral` class as its last index. A label
//! that is absent (`None`) is a missing annotation, which is not the same as
//! `neutral`.

use serde::{Deserialize, Serialize};
use std::fmt;

/// The three classification tasks, in head-slice order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Cf,
    Ic,
    Skill,
}

pub const CF_CLASSES: [&str; 4] = ["bond", "goal_alignment", "task_agreement", "neutral"];
pub const IC_CLASSES: [&str; 3] = ["ear", "cp", "neutral"];
pub const SKILL_CLASSES: [&str; 8] = [
    "open_ended_questions",
    "reflective_listening",
    "affirmation",
    "validation",
    "genuineness",
    "respect_for_autonomy",
    "asking_for_permission",
    "neutral",
];

impl Task {
    pub const ALL: [Task; 3] = [Task::Cf, Task::Ic, Task::Skill];

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Task::Cf => &CF_CLASSES,
            Task::Ic => &IC_CLASSES,
            Task::Skill => &SKILL_CLASSES,
        }
    }

    pub fn class_count(self) -> usize {
        self.class_names().len()
    }

    /// Index of the `neutral` class.
    pub fn neutral(self) -> usize {
        self.class_count() - 1
    }

    pub fn class_index(self, name: &str) -> Option<usize> {
        self.class_names().iter().position(|c| *c == name)
    }

    pub fn class_name(self, index: usize) -> &'static str {
        self.class_names()[index]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Cf => "cf",
            Task::Ic => "ic",
            Task::Skill => "skill",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Task::Cf => "CF",
            Task::Ic => "IC",
            Task::Skill => "Skill",
        };
        f.write_str(s)
    }
}

/// Ground truth for one example node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct LabelSet {
    pub cf: Option<usize>,
    pub ic: Option<usize>,
    pub skill: Option<usize>,
}

impl LabelSet {
    pub fn new(cf: Option<usize>, ic: Option<usize>, skill: Option<usize>) -> Self {
        Self { cf, ic, skill }
    }

    pub fn neutral() -> Self {
        Self {
            cf: Some(Task::Cf.neutral()),
            ic: Some(Task::Ic.neutral()),
            skill: Some(Task::Skill.neutral()),
        }
    }

    pub fn get(&self, task: Task) -> Option<usize> {
        match task {
            Task::Cf => self.cf,
            Task::Ic => self.ic,
            Task::Skill => self.skill,
        }
    }

    pub fn set(&mut self, task: Task, value: Option<usize>) {
        match task {
            Task::Cf => self.cf = value,
            Task::Ic => self.ic = value,
            Task::Skill => self.skill = value,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cf.is_none() && self.ic.is_none() && self.skill.is_none()
    }

    /// True when every present label is within its task's class range.
    pub fn in_range(&self) -> bool {
        Task::ALL
            .iter()
            .all(|&t| self.get(t).is_none_or(|c| c < t.class_count()))
    }
}
