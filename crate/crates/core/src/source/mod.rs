//! Producers of next-token logits.
//!
//! Anything that can score a prefix over the whole vocabulary implements
//! [`LogitSource`]. Graph construction only needs the logit of the token that
//! actually came next at each position, so sources may override
//! [`LogitSource::transition_scores`] with something cheaper than one dense
//! vector per position.

mod replay;
mod toy;

use std::ops::Deref;

use serde::{Deserialize, Serialize};

pub use replay::ReplaySource;
pub use toy::{LogitForm, ToyBigramModel};

use crate::error::{GradError, Result};
use crate::vocab::TokenId;

/// Dense, finite logit vector over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    /// Rejects NaN and infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(LogitVector(values))
    }

    pub fn zeros(len: usize) -> Self {
        LogitVector(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Largest entry, `-inf` for an empty vector.
    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest entry; ties go to the lowest id.
    pub fn argmax(&self) -> Option<TokenId> {
        argmax(&self.0)
    }

    /// The `k` largest entries, ordered by value then id.
    pub fn top_k(&self, k: usize) -> Vec<(TokenId, f64)> {
        let mut pairs: Vec<(TokenId, f64)> = self
            .0
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as TokenId, v))
            .collect();
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        pairs.truncate(k);
        pairs
    }

    pub(crate) fn expect_len(&self, len: usize) -> Result<()> {
        if self.0.len() == len {
            Ok(())
        } else {
            Err(GradError::Shape {
                expected: len,
                found: self.0.len(),
            })
        }
    }
}

impl Deref for LogitVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for LogitVector {
    type Error = GradError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        LogitVector::new(values)
    }
}

impl From<LogitVector> for Vec<f64> {
    fn from(v: LogitVector) -> Self {
        v.0
    }
}

/// Greedy argmax with lowest-index tie-breaking.
pub fn argmax(values: &[f64]) -> Option<TokenId> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i as TokenId)
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(GradError::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// `scores[i]` is the logit given to `seq[i + 1]` after the prefix `seq[..=i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TransitionScores(Vec<f64>);

impl TransitionScores {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        check_finite(&scores)?;
        Ok(TransitionScores(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for TransitionScores {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for TransitionScores {
    type Error = GradError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        TransitionScores::new(values)
    }
}

impl From<TransitionScores> for Vec<f64> {
    fn from(v: TransitionScores) -> Self {
        v.0
    }
}

/// A base model as seen by the decoder: next-token logits for a prefix.
pub trait LogitSource {
    /// Registry name of the implementation, for logs and reports.
    fn name(&self) -> &str;

    fn vocab_size(&self) -> usize;

    /// Logits for the token following `prefix`. `prefix` must be non-empty.
    fn next_logits(&mut self, prefix: &[TokenId]) -> Result<LogitVector>;

    /// Per-position logit of the observed next token.
    ///
    /// The default walks the sequence with [`next_logits`](Self::next_logits).
    fn transition_scores(&mut self, seq: &[TokenId]) -> Result<TransitionScores> {
        if seq.len() < 2 {
            return Err(GradError::SequenceTooShort { len: seq.len() });
        }
        let mut scores = Vec::with_capacity(seq.len() - 1);
        for i in 0..seq.len() - 1 {
            let logits = self.next_logits(&seq[..=i])?;
            let next = seq[i + 1] as usize;
            let score = *logits.get(next).ok_or(GradError::InvalidToken {
                id: seq[i + 1],
                vocab_size: logits.len(),
            })?;
            scores.push(score);
        }
        TransitionScores::new(scores)
    }
}

impl<S: LogitSource + ?Sized> LogitSource for Box<S> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_logits(&mut self, prefix: &[TokenId]) -> Result<LogitVector> {
        (**self).next_logits(prefix)
    }

    fn transition_scores(&mut self, seq: &[TokenId]) -> Result<TransitionScores> {
        (**self).transition_scores(seq)
    }
}
