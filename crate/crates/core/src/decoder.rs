//! Graph-retrieved adaptive decoding.
//!
//! One step of the loop:
//!
//! 1. ask the logit source for the model logits of the current prefix;
//! 2. read the out-edges of the last token as a dense graph logit vector;
//! 3. rescale it with a [`Normalizer`] so its peak is commensurate with the
//!    model's;
//! 4. add `alpha` times the rescaled vector and take the argmax.
//!
//! Normalization is skipped (scale factor 0) whenever either vector's maximum
//! is not positive: the max ratio is undefined or flips signs there.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GradError, Result};
use crate::graph::TransitionGraph;
use crate::source::{argmax, LogitSource, LogitVector};
use crate::vocab::{validate_ids, TokenId, EOS};

/// Chooses the factor that multiplies the graph logits.
pub trait Normalizer: Send + Sync {
    fn name(&self) -> &'static str;

    /// Factor for strictly positive maxima of the graph and model vectors.
    fn scale(&self, graph_max: f64, model_max: f64) -> f64;
}

/// Rescales so the peak graph logit equals the peak model logit.
#[derive(Debug, Clone, Copy, Default)]
pub struct IntentNormalizer;

impl Normalizer for IntentNormalizer {
    fn name(&self) -> &'static str {
        "intent"
    }

    fn scale(&self, graph_max: f64, model_max: f64) -> f64 {
        model_max / graph_max
    }
}

/// Multiplies by `max(graph) / max(model)`, as the ratio is usually written.
#[derive(Debug, Clone, Copy, Default)]
pub struct LiteralNormalizer;

impl Normalizer for LiteralNormalizer {
    fn name(&self) -> &'static str {
        "literal"
    }

    fn scale(&self, graph_max: f64, model_max: f64) -> f64 {
        graph_max / model_max
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    #[default]
    Intent,
    Literal,
}

impl NormMode {
    pub fn normalizer(self) -> &'static dyn Normalizer {
        match self {
            NormMode::Intent => &IntentNormalizer,
            NormMode::Literal => &LiteralNormalizer,
        }
    }

    pub fn as_str(self) -> &'static str {
        self.normalizer().name()
    }
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormMode {
    type Err = GradError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intent" => Ok(NormMode::Intent),
            "literal" => Ok(NormMode::Literal),
            other => Err(GradError::UnknownStrategy {
                kind: "normalization mode",
                name: other.to_owned(),
                available: "intent, literal".to_owned(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub alpha: f64,
    pub norm_mode: NormMode,
    /// Cap on continuation tokens.
    pub max_tokens: usize,
    pub stop_tokens: BTreeSet<TokenId>,
    /// Keep the four logit vectors of every step in the trace.
    pub keep_vectors: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            alpha: 1.0,
            norm_mode: NormMode::Intent,
            max_tokens: 64,
            stop_tokens: BTreeSet::from([EOS]),
            keep_vectors: false,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(GradError::InvalidConfig(format!(
                "alpha must be a finite non-negative number, got {}",
                self.alpha
            )));
        }
        if self.max_tokens == 0 {
            return Err(GradError::InvalidConfig(
                "max_tokens must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepVectors {
    pub model: LogitVector,
    pub graph: LogitVector,
    pub graph_norm: LogitVector,
    #[serde(rename = "final")]
    pub fused: LogitVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    /// Index of the chosen token in the full sequence (prompt included).
    pub position: usize,
    pub chosen: TokenId,
    pub scale_factor: f64,
    /// Whether the graph term changed the fused logits at all.
    pub fused_active: bool,
    pub vectors: Option<StepVectors>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Continuation only; a chosen stop token is included as the last entry.
    pub tokens: Vec<TokenId>,
    pub traces: Vec<StepTrace>,
}

/// Dense vector of out-edge weights of `last`, zero where no edge exists.
pub fn retrieve_graph_logits(
    graph: &TransitionGraph,
    last: TokenId,
    vocab_size: usize,
) -> Result<LogitVector> {
    validate_ids(&[last], vocab_size)?;
    let mut values = vec![0.0; vocab_size];
    for (&v, &w) in graph.out_edges(last)? {
        *values
            .get_mut(v as usize)
            .ok_or(GradError::InvalidToken { id: v, vocab_size })? = w;
    }
    LogitVector::new(values)
}

/// Rescales `graph` against `model`; returns the zero vector and scale 0 if
/// either maximum is not positive.
pub fn max_normalize(
    graph: &LogitVector,
    model: &LogitVector,
    normalizer: &dyn Normalizer,
) -> Result<(LogitVector, f64)> {
    graph.expect_len(model.len())?;
    let graph_max = graph.max();
    let model_max = model.max();
    if !(graph_max > 0.0 && model_max > 0.0) {
        return Ok((LogitVector::zeros(graph.len()), 0.0));
    }
    let scale = normalizer.scale(graph_max, model_max);
    let scaled = graph.iter().map(|&g| g * scale).collect();
    Ok((LogitVector::new(scaled)?, scale))
}

/// `final = model + alpha * graph_norm` and its lowest-id argmax.
pub fn fuse_and_select(
    model: &LogitVector,
    graph_norm: &LogitVector,
    alpha: f64,
) -> Result<(TokenId, LogitVector)> {
    graph_norm.expect_len(model.len())?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(GradError::InvalidConfig(format!(
            "alpha must be non-negative, got {alpha}"
        )));
    }
    let fused = LogitVector::new(
        model
            .iter()
            .zip(graph_norm.iter())
            .map(|(&m, &g)| m + alpha * g)
            .collect(),
    )?;
    let chosen = fused.argmax().ok_or(GradError::Shape {
        expected: 1,
        found: 0,
    })?;
    Ok((chosen, fused))
}

/// Runs the fused greedy loop from `prompt` until a stop token is emitted or
/// `config.max_tokens` tokens have been generated.
pub fn generate<L: LogitSource + ?Sized>(
    source: &mut L,
    graph: &TransitionGraph,
    prompt: &[TokenId],
    config: &DecoderConfig,
) -> Result<Generation> {
    generate_with(source, graph, prompt, config, config.norm_mode.normalizer())
}

/// [`generate`] with an explicit normalizer, overriding `config.norm_mode`.
pub fn generate_with<L: LogitSource + ?Sized>(
    source: &mut L,
    graph: &TransitionGraph,
    prompt: &[TokenId],
    config: &DecoderConfig,
    normalizer: &dyn Normalizer,
) -> Result<Generation> {
    config.validate()?;
    let vocab_size = source.vocab_size();
    if graph.vocab_size() != vocab_size {
        return Err(GradError::IncompatibleArtifacts(format!(
            "graph vocabulary size {} differs from logit source `{}` size {}",
            graph.vocab_size(),
            source.name(),
            vocab_size
        )));
    }
    if prompt.is_empty() {
        return Err(GradError::EmptyPrefix);
    }
    validate_ids(prompt, vocab_size)?;

    let mut sequence = prompt.to_vec();
    let mut traces = Vec::new();
    for _ in 0..config.max_tokens {
        let model = source.next_logits(&sequence)?;
        model.expect_len(vocab_size)?;
        let last = *sequence.last().expect("prompt is non-empty");
        let graph_logits = retrieve_graph_logits(graph, last, vocab_size)?;
        let (graph_norm, scale) = max_normalize(&graph_logits, &model, normalizer)?;
        let (chosen, fused) = fuse_and_select(&model, &graph_norm, config.alpha)?;

        traces.push(StepTrace {
            position: sequence.len(),
            chosen,
            scale_factor: scale,
            fused_active: scale > 0.0 && config.alpha > 0.0,
            vectors: config.keep_vectors.then_some(StepVectors {
                model,
                graph: graph_logits,
                graph_norm,
                fused,
            }),
        });
        sequence.push(chosen);
        if config.stop_tokens.contains(&chosen) {
            break;
        }
    }
    Ok(Generation {
        tokens: sequence.split_off(prompt.len()),
        traces,
    })
}

/// Plain greedy decoding on the source alone, with no graph involved.
pub fn greedy_generate<L: LogitSource + ?Sized>(
    source: &mut L,
    prompt: &[TokenId],
    max_tokens: usize,
    stop_tokens: &BTreeSet<TokenId>,
) -> Result<Vec<TokenId>> {
    if prompt.is_empty() {
        return Err(GradError::EmptyPrefix);
    }
    let mut sequence = prompt.to_vec();
    for _ in 0..max_tokens {
        let logits = source.next_logits(&sequence)?;
        let chosen = argmax(&logits).ok_or(GradError::Shape {
            expected: source.vocab_size(),
            found: 0,
        })?;
        sequence.push(chosen);
        if stop_tokens.contains(&chosen) {
            break;
        }
    }
    Ok(sequence.split_off(prompt.len()))
}

#[derive(Serialize)]
struct TraceLine {
    position: usize,
    chosen: TokenId,
    scale_factor: f64,
    fused_active: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_k: Option<TopK>,
}

#[derive(Serialize)]
struct TopK {
    model: Vec<(TokenId, f64)>,
    graph: Vec<(TokenId, f64)>,
    graph_norm: Vec<(TokenId, f64)>,
    #[serde(rename = "final")]
    fused: Vec<(TokenId, f64)>,
}

pub const DEFAULT_TRACE_TOP_K: usize = 5;

/// One JSON object per step. Top-`k` `(id, logit)` pairs are included for
/// steps that retained their vectors.
pub fn write_trace_jsonl<W: Write>(traces: &[StepTrace], top_k: usize, mut out: W) -> Result<()> {
    for trace in traces {
        let line = TraceLine {
            position: trace.position,
            chosen: trace.chosen,
            scale_factor: trace.scale_factor,
            fused_active: trace.fused_active,
            top_k: trace.vectors.as_ref().map(|v| TopK {
                model: v.model.top_k(top_k),
                graph: v.graph.top_k(top_k),
                graph_norm: v.graph_norm.top_k(top_k),
                fused: v.fused.top_k(top_k),
            }),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
