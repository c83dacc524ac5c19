use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LogitSource, LogitVector};
use crate::error::{GradError, Result};
use crate::vocab::TokenId;

#[derive(Serialize, Deserialize)]
struct ReplayFile {
    vocab_size: usize,
    steps: Vec<LogitVector>,
}

/// Returns pre-scripted logit vectors in order, ignoring the prefix contents.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    vocab_size: usize,
    steps: Vec<LogitVector>,
    cursor: usize,
}

impl ReplaySource {
    pub fn new(vocab_size: usize, steps: Vec<LogitVector>) -> Result<Self> {
        for step in &steps {
            step.expect_len(vocab_size)?;
        }
        Ok(ReplaySource {
            vocab_size,
            steps,
            cursor: 0,
        })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: ReplayFile = serde_json::from_str(json)?;
        Self::new(file.vocab_size, file.steps)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = fs::read_to_string(path).map_err(|e| GradError::file(path, e))?;
        Self::from_json(&json)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ReplayFile {
            vocab_size: self.vocab_size,
            steps: self.steps.clone(),
        })?)
    }

    pub fn remaining(&self) -> usize {
        self.steps.len() - self.cursor
    }

    pub fn rewind(&mut self) {
        self.cursor = 0;
    }
}

impl LogitSource for ReplaySource {
    fn name(&self) -> &str {
        "replay"
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logits(&mut self, prefix: &[TokenId]) -> Result<LogitVector> {
        if prefix.is_empty() {
            return Err(GradError::EmptyPrefix);
        }
        let step = self
            .steps
            .get(self.cursor)
            .cloned()
            .ok_or(GradError::ReplayUnderrun {
                steps: self.steps.len(),
            })?;
        self.cursor += 1;
        Ok(step)
    }
}
