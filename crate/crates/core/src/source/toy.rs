use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{LogitSource, LogitVector, TransitionScores};
use crate::error::{GradError, Result};
use crate::vocab::{validate_ids, TokenId, TokenSequence};

/// How the toy model turns smoothed bigram probabilities into logits.
///
/// Both forms induce the same softmax distribution and the same argmax; they
/// differ by a per-row additive constant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "form")]
pub enum LogitForm {
    /// `ln((count + k) / (rowsum + k·|V|))`. Always `<= 0`.
    #[default]
    LogProb,
    /// `floor + ln(1 + count / k)`: the log-probability shifted so that an
    /// unseen continuation sits at `floor`. With `floor > 0` every logit is
    /// strictly positive, which is what max-normalized fusion expects from a
    /// real model's raw logits.
    Raw { floor: f64 },
}

impl LogitForm {
    pub const DEFAULT_RAW_FLOOR: f64 = 1.0;

    pub fn raw() -> Self {
        LogitForm::Raw {
            floor: Self::DEFAULT_RAW_FLOOR,
        }
    }
}

/// First-order add-k smoothed bigram model.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBigramModel {
    counts: HashMap<TokenId, BTreeMap<TokenId, u64>>,
    row_sums: HashMap<TokenId, u64>,
    k: f64,
    vocab_size: usize,
    form: LogitForm,
}

impl ToyBigramModel {
    pub const DEFAULT_SMOOTHING: f64 = 1.0;

    /// Counts adjacent pairs across `corpus`.
    pub fn fit(corpus: &[TokenSequence], vocab_size: usize, k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(GradError::InvalidConfig(format!(
                "smoothing k must be a positive finite number, got {k}"
            )));
        }
        let mut counts: HashMap<TokenId, BTreeMap<TokenId, u64>> = HashMap::new();
        let mut row_sums: HashMap<TokenId, u64> = HashMap::new();
        for seq in corpus {
            validate_ids(seq, vocab_size)?;
            for pair in seq.windows(2) {
                *counts
                    .entry(pair[0])
                    .or_default()
                    .entry(pair[1])
                    .or_default() += 1;
                *row_sums.entry(pair[0]).or_default() += 1;
            }
        }
        Ok(ToyBigramModel {
            counts,
            row_sums,
            k,
            vocab_size,
            form: LogitForm::LogProb,
        })
    }

    pub fn with_form(mut self, form: LogitForm) -> Self {
        self.form = form;
        self
    }

    pub fn form(&self) -> LogitForm {
        self.form
    }

    pub fn smoothing(&self) -> f64 {
        self.k
    }

    pub fn count(&self, u: TokenId, v: TokenId) -> u64 {
        self.counts
            .get(&u)
            .and_then(|row| row.get(&v))
            .copied()
            .unwrap_or(0)
    }

    pub fn row_sum(&self, u: TokenId) -> u64 {
        self.row_sums.get(&u).copied().unwrap_or(0)
    }

    fn logit(&self, count: u64, row_sum: u64) -> f64 {
        match self.form {
            LogitForm::LogProb => {
                ((count as f64 + self.k) / (row_sum as f64 + self.k * self.vocab_size as f64)).ln()
            }
            LogitForm::Raw { floor } => floor + ((count as f64 + self.k) / self.k).ln(),
        }
    }

    /// Dense logits conditioned on the single token `last`.
    pub fn logits_after(&self, last: TokenId) -> Result<LogitVector> {
        validate_ids(&[last], self.vocab_size)?;
        let row_sum = self.row_sum(last);
        let unseen = self.logit(0, row_sum);
        let mut values = vec![unseen; self.vocab_size];
        if let Some(row) = self.counts.get(&last) {
            for (&v, &c) in row {
                values[v as usize] = self.logit(c, row_sum);
            }
        }
        LogitVector::new(values)
    }
}

impl LogitSource for ToyBigramModel {
    fn name(&self) -> &str {
        match self.form {
            LogitForm::LogProb => "toy",
            LogitForm::Raw { .. } => "toy-raw",
        }
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logits(&mut self, prefix: &[TokenId]) -> Result<LogitVector> {
        let &last = prefix.last().ok_or(GradError::EmptyPrefix)?;
        self.logits_after(last)
    }

    fn transition_scores(&mut self, seq: &[TokenId]) -> Result<TransitionScores> {
        if seq.len() < 2 {
            return Err(GradError::SequenceTooShort { len: seq.len() });
        }
        validate_ids(seq, self.vocab_size)?;
        let scores = seq
            .windows(2)
            .map(|p| self.logit(self.count(p[0], p[1]), self.row_sum(p[0])))
            .collect();
        TransitionScores::new(scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{BOS, EOS};

    const A: TokenId = 3;
    const B: TokenId = 4;

    fn seqs(raw: &[&[TokenId]]) -> Vec<TokenSequence> {
        raw.iter().map(|s| TokenSequence::new(s.to_vec())).collect()
    }

    #[test]
    fn empty_corpus_counts_nothing() {
        let model = ToyBigramModel::fit(&[], 5, 1.0).unwrap();
        for u in 0..5 {
            assert_eq!(model.row_sum(u), 0);
        }
    }

    #[test]
    fn counts_adjacent_pairs() {
        let corpus = seqs(&[&[BOS, A, B, EOS], &[BOS, A, B, EOS]]);
        let model = ToyBigramModel::fit(&corpus, 5, 1.0).unwrap();
        assert_eq!(model.count(A, B), 2);
        assert_eq!(model.count(BOS, A), 2);
        assert_eq!(model.count(B, EOS), 2);
        assert_eq!(model.count(A, A), 0);
    }

    #[test]
    fn fit_is_order_independent() {
        let corpus = seqs(&[&[BOS, A, B, EOS], &[BOS, B, B, A, EOS], &[BOS, EOS]]);
        let mut reversed = corpus.clone();
        reversed.reverse();
        assert_eq!(
            ToyBigramModel::fit(&corpus, 5, 1.0).unwrap(),
            ToyBigramModel::fit(&reversed, 5, 1.0).unwrap()
        );
    }

    #[test]
    fn rejects_bad_smoothing_and_ids() {
        assert!(ToyBigramModel::fit(&[], 5, 0.0).is_err());
        assert!(ToyBigramModel::fit(&[], 5, -1.0).is_err());
        assert!(ToyBigramModel::fit(&seqs(&[&[BOS, 7]]), 5, 1.0).is_err());
    }

    #[test]
    fn unseen_row_is_uniform() {
        let mut model = ToyBigramModel::fit(&[], 5, 1.0).unwrap();
        let logits = model.next_logits(&[A]).unwrap();
        for &l in logits.iter() {
            assert_eq!(l, (1.0f64 / 5.0).ln());
        }
    }

    #[test]
    fn smoothed_formula() {
        let corpus = seqs(&[&[A, B], &[A, B]]);
        let mut model = ToyBigramModel::fit(&corpus, 5, 1.0).unwrap();
        let logits = model.next_logits(&[BOS, A]).unwrap();
        assert!((logits[B as usize] - (3.0f64 / 7.0).ln()).abs() < 1e-15);
        assert!((logits[A as usize] - (1.0f64 / 7.0).ln()).abs() < 1e-15);
        let total: f64 = logits.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn raw_form_is_a_row_shift_of_log_prob() {
        let corpus = seqs(&[&[BOS, A, B, EOS], &[BOS, A, A, EOS], &[BOS, A, B, B]]);
        let log_prob = ToyBigramModel::fit(&corpus, 5, 1.0).unwrap();
        let raw = log_prob.clone().with_form(LogitForm::raw());
        for u in 0..5 {
            let lp = log_prob.logits_after(u).unwrap();
            let rw = raw.logits_after(u).unwrap();
            let shift = rw[0] - lp[0];
            for v in 0..5 {
                assert!((rw[v] - lp[v] - shift).abs() < 1e-12);
                assert!(rw[v] >= 1.0);
            }
            assert_eq!(lp.argmax(), rw.argmax());
        }
        // seen twice after A with k = 1: 1 + ln 3
        assert!((raw.logits_after(A).unwrap()[B as usize] - (1.0 + 3f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn transition_scores_use_the_formula() {
        let corpus = seqs(&[&[BOS, A, B, EOS]]);
        let mut model = ToyBigramModel::fit(&corpus, 5, 1.0).unwrap();
        let scores = model.transition_scores(&[BOS, A, B, EOS]).unwrap();
        // each row has one observed successor with count 1: (1+1)/(1+5)
        let expected = (2.0f64 / 6.0).ln();
        assert_eq!(scores.len(), 3);
        for &s in scores.iter() {
            assert!((s - expected).abs() < 1e-15);
        }
        assert!(matches!(
            model.transition_scores(&[BOS]),
            Err(GradError::SequenceTooShort { len: 1 })
        ));
    }
}
