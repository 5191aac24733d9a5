use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// Which kind of example a record is. Decides the required optional fields
/// and the text-length cap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Vqa,
    Act,
    Nli,
    Vcr,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Vqa, Task::Act, Task::Nli, Task::Vcr];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Vqa => "vqa",
            Task::Act => "act",
            Task::Nli => "nli",
            Task::Vcr => "vcr",
        }
    }

    /// Whether several annotators may give different answers, so the
    /// explain-predict classifier trains on soft targets.
    pub fn multi_answer(self) -> bool {
        matches!(self, Task::Vqa | Task::Act)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = alloc::string::String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| alloc::format!("unknown task {s:?}"))
    }
}
