//! Graph-retrieved adaptive decoding.
//!
//! A sparse token transition graph is built in one pass over a small corpus by
//! accumulating, for every adjacent token pair `(u, v)`, the logit the base
//! model assigned to `v` when it followed `u`. At decoding time the out-edges
//! of the last emitted token are turned into a dense logit vector, rescaled to
//! the magnitude of the model's own logits and added to them with weight
//! `alpha` before a greedy argmax.
//!
//! Crate layout:
//!
//! - [`vocab`]: deterministic whitespace/punctuation tokenizer and vocabulary.
//! - [`source`]: the [`LogitSource`](source::LogitSource) trait and the
//!   built-in toy bigram and replay sources.
//! - [`bridge`]: JSON-lines protocol that lets an external process act as a
//!   logit source.
//! - [`graph`]: the transition graph, its construction and file formats.
//! - [`decoder`]: retrieval, normalization, fusion and the generation loop.
//! - [`registry`]: name-based lookup of logit sources and normalizers.
//! - [`eval`]: planted-fact benchmark, alpha and corpus-size sweeps.

pub mod bridge;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod registry;
pub mod source;
pub mod vocab;

pub use decoder::{generate, DecoderConfig, Generation, NormMode, StepTrace};
pub use error::{GradError, Result};
pub use graph::{GraphStats, TransitionGraph};
pub use source::{LogitSource, LogitVector, TransitionScores};
pub use vocab::{TokenId, TokenSequence, Vocab};
