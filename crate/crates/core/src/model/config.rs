use alloc::format;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::data::Task;
use crate::tokenizer::{MAX_CONCEPTS, MAX_OBJECTS};
use crate::vision::VisionConfig;

/// Maximum text length (question onwards) per task, plus the prefix caps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCaps {
    pub vqa: usize,
    pub act: usize,
    pub nli: usize,
    pub vcr: usize,
    pub caption: usize,
    pub concepts: usize,
    pub objects: usize,
}

impl Default for TaskCaps {
    fn default() -> Self {
        Self { vqa: 40, act: 30, nli: 40, vcr: 60, caption: 70, concepts: MAX_CONCEPTS, objects: MAX_OBJECTS }
    }
}

impl TaskCaps {
    pub fn for_task(&self, task: Task) -> usize {
        match task {
            Task::Vqa => self.vqa,
            Task::Act => self.act,
            Task::Nli => self.nli,
            Task::Vcr => self.vcr,
        }
    }

    /// Longest text part of any task or caption.
    pub fn max_text(&self) -> usize {
        [self.vqa, self.act, self.nli, self.vcr, self.caption].into_iter().max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlxConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    /// Concept vocabulary size `N`.
    pub num_concepts: usize,
    /// Hidden width `d_k` of the concept head's MLP.
    pub summary_dim: usize,
    pub vision: VisionConfig,
    pub caps: TaskCaps,
}

impl NlxConfig {
    /// Desk-scale defaults for a vocabulary of `vocab_size` tokens and `num_concepts` concepts.
    pub fn small(vocab_size: usize, num_concepts: usize) -> Self {
        let caps = TaskCaps::default();
        Self {
            vocab_size,
            dim: 32,
            layers: 2,
            heads: 4,
            ff_dim: 64,
            max_positions: caps.max_text() + caps.concepts + caps.objects,
            num_concepts,
            summary_dim: 32,
            vision: VisionConfig::default(),
            caps,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: alloc::string::String| Err(ModelError::Config(m));
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} not divisible by {} heads", self.dim, self.heads));
        }
        if self.vision.dim == 0 || self.vision.heads == 0 || self.vision.dim % self.vision.heads != 0 {
            return bad(format!("vision dim {} not divisible by {} heads", self.vision.dim, self.vision.heads));
        }
        if self.vocab_size < crate::tokenizer::SPECIALS.len() {
            return bad(format!("vocabulary of {} cannot hold the reserved tokens", self.vocab_size));
        }
        let c = &self.caps;
        if [c.vqa, c.act, c.nli, c.vcr, c.caption, c.concepts, c.objects].contains(&0) {
            return bad("caps must be positive".into());
        }
        if [self.layers, self.ff_dim, self.max_positions, self.num_concepts, self.summary_dim].contains(&0) {
            return bad("layers, ff_dim, max_positions, num_concepts and summary_dim must be positive".into());
        }
        self.vision.grid().map_err(ModelError::Vision)?;
        Ok(())
    }
}
