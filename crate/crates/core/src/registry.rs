//! Name-based lookup of interchangeable strategies.
//!
//! Logit sources and graph normalizers are registered under a short name and
//! picked at runtime (`--source`, `--norm-mode`). [`Registry::with_builtins`]
//! style constructors pre-load the built-in implementations; callers can
//! register their own on top.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use crate::bridge::{BridgeClient, DEFAULT_TIMEOUT};
use crate::decoder::{IntentNormalizer, LiteralNormalizer, Normalizer};
use crate::error::{GradError, Result};
use crate::source::{LogitForm, LogitSource, ReplaySource, ToyBigramModel};
use crate::vocab::{TokenSequence, Vocab};

pub trait Named {
    fn registry_name(&self) -> &'static str;
}

impl Named for dyn Normalizer {
    fn registry_name(&self) -> &'static str {
        self.name()
    }
}

impl Named for dyn SourceFactory {
    fn registry_name(&self) -> &'static str {
        self.name()
    }
}

pub struct Registry<T: ?Sized + Named> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Box<T>>,
}

impl<T: ?Sized + Named> Registry<T> {
    pub fn empty(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Adds or replaces the entry under the item's own name.
    pub fn register(&mut self, item: Box<T>) -> &mut Self {
        self.entries.insert(item.registry_name(), item);
        self
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries
            .get(name)
            .map(Box::as_ref)
            .ok_or_else(|| GradError::UnknownStrategy {
                kind: self.kind,
                name: name.to_owned(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

pub type NormalizerRegistry = Registry<dyn Normalizer>;
pub type SourceRegistry = Registry<dyn SourceFactory>;

impl NormalizerRegistry {
    pub fn with_builtins() -> Self {
        let mut registry = Self::empty("normalization mode");
        registry
            .register(Box::new(IntentNormalizer))
            .register(Box::new(LiteralNormalizer));
        registry
    }
}

/// Everything a source factory may draw on. Unused fields are ignored.
#[derive(Debug, Clone)]
pub struct SourceSpec<'a> {
    pub vocab: &'a Vocab,
    /// Tokenized records the toy models are fitted on.
    pub corpus: &'a [TokenSequence],
    pub smoothing: f64,
    pub raw_floor: f64,
    pub replay_path: Option<PathBuf>,
    pub bridge_cmd: Option<String>,
    pub bridge_timeout: Duration,
}

impl<'a> SourceSpec<'a> {
    pub fn new(vocab: &'a Vocab, corpus: &'a [TokenSequence]) -> Self {
        SourceSpec {
            vocab,
            corpus,
            smoothing: ToyBigramModel::DEFAULT_SMOOTHING,
            raw_floor: LogitForm::DEFAULT_RAW_FLOOR,
            replay_path: None,
            bridge_cmd: None,
            bridge_timeout: DEFAULT_TIMEOUT,
        }
    }
}

pub trait SourceFactory: Send + Sync {
    fn name(&self) -> &'static str;

    fn description(&self) -> &'static str;

    fn create(&self, spec: &SourceSpec<'_>) -> Result<Box<dyn LogitSource>>;
}

struct ToyFactory;

impl SourceFactory for ToyFactory {
    fn name(&self) -> &'static str {
        "toy"
    }

    fn description(&self) -> &'static str {
        "add-k bigram model fitted on the corpus, log-probability logits"
    }

    fn create(&self, spec: &SourceSpec<'_>) -> Result<Box<dyn LogitSource>> {
        let model = ToyBigramModel::fit(spec.corpus, spec.vocab.len(), spec.smoothing)?;
        Ok(Box::new(model))
    }
}

struct ToyRawFactory;

impl SourceFactory for ToyRawFactory {
    fn name(&self) -> &'static str {
        "toy-raw"
    }

    fn description(&self) -> &'static str {
        "add-k bigram model fitted on the corpus, positive raw logits"
    }

    fn create(&self, spec: &SourceSpec<'_>) -> Result<Box<dyn LogitSource>> {
        let model = ToyBigramModel::fit(spec.corpus, spec.vocab.len(), spec.smoothing)?.with_form(
            LogitForm::Raw {
                floor: spec.raw_floor,
            },
        );
        Ok(Box::new(model))
    }
}

struct ReplayFactory;

impl SourceFactory for ReplayFactory {
    fn name(&self) -> &'static str {
        "replay"
    }

    fn description(&self) -> &'static str {
        "pre-scripted logit vectors from a JSON file"
    }

    fn create(&self, spec: &SourceSpec<'_>) -> Result<Box<dyn LogitSource>> {
        let path = spec.replay_path.as_ref().ok_or_else(|| {
            GradError::InvalidConfig("the replay source needs a replay file".into())
        })?;
        let source = ReplaySource::load(path)?;
        if source.vocab_size() != spec.vocab.len() {
            return Err(GradError::IncompatibleArtifacts(format!(
                "replay file {} has vocab_size {} but the vocabulary has {} tokens",
                path.display(),
                source.vocab_size(),
                spec.vocab.len()
            )));
        }
        Ok(Box::new(source))
    }
}

struct BridgeFactory;

impl SourceFactory for BridgeFactory {
    fn name(&self) -> &'static str {
        "bridge"
    }

    fn description(&self) -> &'static str {
        "external logit server over the JSON-lines bridge protocol"
    }

    fn create(&self, spec: &SourceSpec<'_>) -> Result<Box<dyn LogitSource>> {
        let cmd = spec.bridge_cmd.as_deref().ok_or_else(|| {
            GradError::InvalidConfig("the bridge source needs a bridge command".into())
        })?;
        let client = BridgeClient::spawn_shell(cmd, spec.bridge_timeout)?;
        client.expect_vocab_size(spec.vocab.len())?;
        Ok(Box::new(client))
    }
}

impl SourceRegistry {
    pub fn with_builtins() -> Self {
        let mut registry = Self::empty("logit source");
        registry
            .register(Box::new(ToyFactory))
            .register(Box::new(ToyRawFactory))
            .register(Box::new(ReplayFactory))
            .register(Box::new(BridgeFactory));
        registry
    }

    pub fn create(&self, name: &str, spec: &SourceSpec<'_>) -> Result<Box<dyn LogitSource>> {
        self.get(name)?.create(spec)
    }
}
