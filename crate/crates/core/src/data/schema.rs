use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{DataError, Task};
use crate::model::{BBox, TaskCaps};
use crate::tokenizer::{tokenize, MAX_OBJECTS};

/// One object annotation as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    pub label: String,
    #[serde(rename = "ref")]
    pub reference: String,
    pub bbox: [f64; 4],
}

impl ObjectRecord {
    pub fn bbox(&self) -> BBox {
        BBox::from_array(self.bbox)
    }
}

/// One example line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NleExample {
    pub id: String,
    pub task: Task,
    /// Image file path or feature-file key.
    pub image: String,
    /// Question, or hypothesis for entailment examples. Empty for activity examples.
    pub question: String,
    pub answers: Vec<String>,
    pub explanations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concepts: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objects: Option<Vec<ObjectRecord>>,
}

impl NleExample {
    /// Most frequent answer, ties to the one listed first. Used as the
    /// training target.
    pub fn majority_answer(&self) -> &str {
        let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for (i, a) in self.answers.iter().enumerate() {
            counts.entry(a.as_str()).or_insert((0, i)).0 += 1;
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
            .map(|(a, _)| a)
            .unwrap_or("")
    }

    /// Checks the task-dependent field rules and that the question and every
    /// answer fit the task's length cap.
    pub fn validate(&self, caps: &TaskCaps) -> Result<(), DataError> {
        let err = |m: String| Err(DataError::Invalid { id: self.id.clone(), message: m });
        if self.id.is_empty() {
            return err("empty id".into());
        }
        if self.image.is_empty() {
            return err("empty image reference".into());
        }
        if self.answers.is_empty() || self.answers.iter().any(|a| tokenize(a).is_empty()) {
            return err("answers must be a non-empty list of non-empty strings".into());
        }
        if self.explanations.is_empty() || self.explanations.iter().any(|e| tokenize(e).is_empty()) {
            return err("explanations must be a non-empty list of non-empty strings".into());
        }
        if self.task == Task::Nli && tokenize(&self.question).is_empty() {
            return err("entailment examples need a hypothesis".into());
        }
        match (&self.objects, self.task) {
            (None, Task::Vcr) => return err("vcr examples need objects".into()),
            (Some(o), Task::Vcr) if o.is_empty() => return err("vcr examples need objects".into()),
            (Some(o), _) if o.len() > MAX_OBJECTS => {
                return err(format!("{} objects, at most {}", o.len(), MAX_OBJECTS));
            }
            _ => {}
        }
        for o in self.objects.iter().flatten() {
            let [x1, y1, x2, y2] = o.bbox;
            if !(0.0 <= x1 && x1 < x2 && 0.0 <= y1 && y1 < y2) {
                return err(format!("degenerate box {:?} for {}", o.bbox, o.reference));
            }
        }
        let cap = caps.for_task(self.task);
        let q = tokenize(&self.question).len();
        for a in &self.answers {
            // question, <bos>, answer, delimiter, one explanation token, <eos>
            let need = q + 1 + tokenize(a).len() + 3;
            if need > cap {
                return err(format!("question and answer {a:?} need {need} tokens, cap is {cap}"));
            }
        }
        Ok(())
    }
}

/// Rejects duplicate ids, then validates every example.
pub fn validate_dataset(examples: &[NleExample], caps: &TaskCaps) -> Result<(), DataError> {
    if examples.is_empty() {
        return Err(DataError::Empty);
    }
    let mut seen = BTreeSet::new();
    for e in examples {
        if !seen.insert(e.id.as_str()) {
            return Err(DataError::DuplicateId(e.id.clone()));
        }
        e.validate(caps)?;
    }
    Ok(())
}

/// Model output for one example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub answer: String,
    pub explanation: String,
    /// False when the generated text had no delimiter.
    #[serde(default = "yes")]
    pub parsed: bool,
}

fn yes() -> bool {
    true
}
