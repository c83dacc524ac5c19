//! Vocabulary and the whitespace/punctuation tokenizer.
//!
//! Token ids are dense `0..len`. Ids 0, 1 and 2 are always the reserved
//! `UNK`, `BOS` and `EOS` tokens so that graph files stay portable between
//! vocabularies built from different corpora.

use std::collections::HashMap;
use std::fs;
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GradError, Result};

pub type TokenId = u32;

pub const UNK: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;

pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";

const RESERVED: [&str; 3] = [UNK_TOKEN, BOS_TOKEN, EOS_TOKEN];

pub fn is_reserved(id: TokenId) -> bool {
    id <= EOS
}

/// Ordered token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        TokenSequence(ids)
    }

    /// Checks every id against `vocab_size`.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        validate_ids(&self.0, vocab_size)
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        TokenSequence(ids)
    }
}

impl FromIterator<TokenId> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = TokenId>>(iter: I) -> Self {
        TokenSequence(iter.into_iter().collect())
    }
}

pub(crate) fn validate_ids(ids: &[TokenId], vocab_size: usize) -> Result<()> {
    match ids.iter().find(|&&id| id as usize >= vocab_size) {
        Some(&id) => Err(GradError::InvalidToken { id, vocab_size }),
        None => Ok(()),
    }
}

/// Bidirectional map between surface strings and token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    entries: Vec<String>,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::reserved_only()
    }
}

impl Vocab {
    fn reserved_only() -> Self {
        let mut vocab = Vocab {
            entries: Vec::new(),
            index: HashMap::new(),
        };
        for token in RESERVED {
            vocab.push(token);
        }
        vocab
    }

    fn push(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.entries.len() as TokenId;
        self.entries.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    /// Builds a vocabulary from every surface token in `corpus`, assigning ids
    /// in first-occurrence order after the reserved tokens.
    pub fn build<S: AsRef<str>>(corpus: &[S]) -> Self {
        let mut vocab = Self::reserved_only();
        for record in corpus {
            for piece in split_surface(record.as_ref()) {
                vocab.push(piece);
            }
        }
        vocab
    }

    /// Rebuilds a vocabulary from an ordered token list (position = id).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (id, expected) in RESERVED.iter().enumerate() {
            match tokens.get(id) {
                Some(t) if t == expected => {}
                Some(t) => {
                    return Err(GradError::VocabFormat(format!(
                        "position {id} must hold reserved token {expected:?}, found {t:?}"
                    )))
                }
                None => {
                    return Err(GradError::VocabFormat(format!(
                        "missing reserved token {expected:?} at position {id}"
                    )))
                }
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), id as TokenId).is_some() {
                return Err(GradError::VocabFormat(format!("duplicate token {token:?}")));
            }
        }
        Ok(Vocab {
            entries: tokens,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Always false: the reserved tokens are present in every vocabulary.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.entries.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.entries
    }

    /// `BOS`, body tokens, `EOS`. Unknown surface forms map to `UNK`.
    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let mut ids = self.tokenize_prompt(text).into_inner();
        ids.push(EOS);
        TokenSequence(ids)
    }

    /// Like [`tokenize`](Self::tokenize) but without the trailing `EOS`, which
    /// is what a decoding prompt needs.
    pub fn tokenize_prompt(&self, text: &str) -> TokenSequence {
        let mut ids = vec![BOS];
        ids.extend(split_surface(text).map(|piece| self.id(piece).unwrap_or(UNK)));
        TokenSequence(ids)
    }

    /// Joins non-reserved tokens with single spaces; `UNK` renders as `<unk>`.
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        validate_ids(ids, self.len())?;
        let mut out = String::new();
        for &id in ids {
            if id == BOS || id == EOS {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&self.entries[id as usize]);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&VocabFile {
            tokens: self.entries.clone(),
        })?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(json)?;
        Self::from_tokens(file.tokens)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| GradError::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = fs::read_to_string(path).map_err(|e| GradError::file(path, e))?;
        Self::from_json(&json)
    }
}

/// Splits on Unicode whitespace, then peels leading and trailing ASCII
/// punctuation off each word, one character per token.
pub fn split_surface(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace().flat_map(split_word)
}

fn split_word(word: &str) -> Vec<&str> {
    let bytes = word.as_bytes();
    let mut start = 0;
    while start < bytes.len() && bytes[start].is_ascii_punctuation() {
        start += 1;
    }
    let mut end = bytes.len();
    while end > start && bytes[end - 1].is_ascii_punctuation() {
        end -= 1;
    }
    // ASCII punctuation is single-byte, so these are all char boundaries.
    let mut pieces = Vec::with_capacity(1 + (bytes.len() - (end - start)));
    pieces.extend((0..start).map(|i| &word[i..i + 1]));
    if end > start {
        pieces.push(&word[start..end]);
    }
    pieces.extend((end..bytes.len()).map(|i| &word[i..i + 1]));
    pieces
}
