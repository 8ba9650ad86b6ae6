//! Questions, labels and split statistics.

use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};

/// The literal written in label and prediction files for an unanswerable question.
pub const NULL_MARKER: &str = "null";

/// Returns true when `text` is the null marker, ignoring case and surrounding whitespace.
pub fn is_null_marker(text: &str) -> bool {
    text.trim().eq_ignore_ascii_case(NULL_MARKER)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(alloc::format!("unknown split {other:?}")),
        }
    }
}

/// Either an SQL statement or an explicit abstention.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Answer {
    Sql(String),
    Null,
}

impl Answer {
    /// Parses a label or prediction string. Returns `None` for an empty string.
    pub fn parse(text: &str) -> Option<Answer> {
        if text.trim().is_empty() {
            None
        } else if is_null_marker(text) {
            Some(Answer::Null)
        } else {
            Some(Answer::Sql(String::from(text)))
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Answer::Null)
    }

    pub fn sql(&self) -> Option<&str> {
        match self {
            Answer::Sql(s) => Some(s),
            Answer::Null => None,
        }
    }

    /// The string written to prediction and label files.
    pub fn as_file_str(&self) -> &str {
        match self {
            Answer::Sql(s) => s,
            Answer::Null => NULL_MARKER,
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_file_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Label {
    pub id: String,
    pub answer: Answer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitStats {
    pub total: usize,
    pub unanswerable_fraction: f64,
}

pub fn stats(labels: &[Label]) -> SplitStats {
    let total = labels.len();
    if total == 0 {
        return SplitStats { total: 0, unanswerable_fraction: 0.0 };
    }
    let nulls = labels.iter().filter(|l| l.answer.is_null()).count();
    SplitStats { total, unanswerable_fraction: nulls as f64 / total as f64 }
}
