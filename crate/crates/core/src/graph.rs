//! The token transition graph.
//!
//! Edge `(u, v)` carries the sum, over every occurrence of the pair in the
//! construction corpus, of the logit the source assigned to `v` right after
//! `u`. Only observed pairs are stored; everything else reads as weight 0.
//! Weights are raw sums and may be negative when the source emits negative
//! logits.
//!
//! Binary layout (little endian), records sorted by `(src, dst)`:
//!
//! ```text
//! "GTTG" | 0x01 | vocab_size: u32 | edge_count: u64 | (src: u32, dst: u32, weight: f64) * edge_count
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GradError, Result};
use crate::source::{LogitSource, TransitionScores};
use crate::vocab::{is_reserved, validate_ids, TokenId, TokenSequence, Vocab, BOS, EOS};

pub const MAGIC: &[u8; 4] = b"GTTG";
pub const FORMAT_VERSION: u8 = 0x01;

const HEADER_LEN: usize = 4 + 1 + 4 + 8;
const RECORD_LEN: usize = 4 + 4 + 8;

static NO_EDGES: BTreeMap<TokenId, f64> = BTreeMap::new();

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GraphBuildOptions {
    /// Drop pairs that touch `BOS` or `EOS`.
    pub skip_boundaries: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionGraph {
    vocab_size: usize,
    edges: BTreeMap<TokenId, BTreeMap<TokenId, f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub corpus_size: usize,
    pub nodes: usize,
    pub edges: usize,
    pub edge_node_ratio: f64,
}

impl TransitionGraph {
    pub fn new(vocab_size: usize) -> Self {
        TransitionGraph {
            vocab_size,
            edges: BTreeMap::new(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(BTreeMap::len).sum()
    }

    /// Tokens that are the source or destination of at least one edge.
    pub fn node_count(&self) -> usize {
        let mut nodes: BTreeSet<TokenId> = self.edges.keys().copied().collect();
        nodes.extend(self.edges.values().flat_map(|row| row.keys().copied()));
        nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Stored weight, or `None` when the edge was never observed.
    pub fn weight(&self, u: TokenId, v: TokenId) -> Option<f64> {
        self.edges.get(&u).and_then(|row| row.get(&v)).copied()
    }

    /// All `(src, dst, weight)` triples in canonical `(src, dst)` order.
    pub fn edges(&self) -> impl Iterator<Item = (TokenId, TokenId, f64)> + '_ {
        self.edges
            .iter()
            .flat_map(|(&u, row)| row.iter().map(move |(&v, &w)| (u, v, w)))
    }

    /// Whether any edge touches a reserved token.
    pub fn has_reserved_edges(&self) -> bool {
        self.edges()
            .any(|(u, v, _)| is_reserved(u) || is_reserved(v))
    }

    /// Stored out-neighbours of `u`; empty when `u` has none.
    pub fn out_edges(&self, u: TokenId) -> Result<&BTreeMap<TokenId, f64>> {
        validate_ids(&[u], self.vocab_size)?;
        Ok(self.edges.get(&u).unwrap_or(&NO_EDGES))
    }

    /// Adds `scores[i]` to the weight of `(seq[i], seq[i + 1])`, creating
    /// missing edges at zero first.
    pub fn accumulate_sequence(&mut self, seq: &[TokenId], scores: &[f64]) -> Result<()> {
        self.accumulate_with(seq, scores, GraphBuildOptions::default())
    }

    pub fn accumulate_with(
        &mut self,
        seq: &[TokenId],
        scores: &[f64],
        options: GraphBuildOptions,
    ) -> Result<()> {
        if scores.len() + 1 != seq.len() && !(seq.is_empty() && scores.is_empty()) {
            return Err(GradError::ScoreAlignment {
                tokens: seq.len(),
                scores: scores.len(),
            });
        }
        validate_ids(seq, self.vocab_size)?;
        if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
            return Err(GradError::NonFinite {
                index,
                value: scores[index],
            });
        }
        for (pair, &score) in seq.windows(2).zip(scores) {
            let (u, v) = (pair[0], pair[1]);
            if options.skip_boundaries && is_boundary(u, v) {
                continue;
            }
            *self.edges.entry(u).or_default().entry(v).or_insert(0.0) += score;
        }
        Ok(())
    }

    /// Adds every edge of `other` into `self`.
    pub fn merge_from(&mut self, other: &TransitionGraph) -> Result<()> {
        if self.vocab_size != other.vocab_size {
            return Err(GradError::IncompatibleGraph {
                left: self.vocab_size,
                right: other.vocab_size,
            });
        }
        for (u, v, w) in other.edges() {
            *self.edges.entry(u).or_default().entry(v).or_insert(0.0) += w;
        }
        Ok(())
    }

    pub fn stats(&self, corpus_size: usize) -> GraphStats {
        let nodes = self.node_count();
        let edges = self.edge_count();
        GraphStats {
            corpus_size,
            nodes,
            edges,
            edge_node_ratio: if nodes > 0 {
                edges as f64 / nodes as f64
            } else {
                0.0
            },
        }
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let vocab_size = u32::try_from(self.vocab_size).map_err(|_| {
            GradError::GraphFormat(format!("vocabulary size {} exceeds u32", self.vocab_size))
        })?;
        let edge_count = self.edge_count();
        let mut buf = Vec::with_capacity(HEADER_LEN + edge_count * RECORD_LEN);
        buf.extend_from_slice(MAGIC);
        buf.push(FORMAT_VERSION);
        buf.extend_from_slice(&vocab_size.to_le_bytes());
        buf.extend_from_slice(&(edge_count as u64).to_le_bytes());
        for (u, v, w) in self.edges() {
            buf.extend_from_slice(&u.to_le_bytes());
            buf.extend_from_slice(&v.to_le_bytes());
            buf.extend_from_slice(&w.to_le_bytes());
        }
        Ok(buf)
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(GradError::GraphFormat(format!(
                "{} bytes is shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(GradError::GraphFormat(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(&bytes[..4])
            )));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(GradError::GraphFormat(format!(
                "unsupported version {:#04x}",
                bytes[4]
            )));
        }
        let vocab_size = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let edge_count = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
        let body = &bytes[HEADER_LEN..];
        let expected = usize::try_from(edge_count)
            .ok()
            .and_then(|n| n.checked_mul(RECORD_LEN));
        if expected != Some(body.len()) {
            return Err(GradError::GraphFormat(format!(
                "header declares {edge_count} edges but body holds {} bytes",
                body.len()
            )));
        }
        let mut triples = Vec::with_capacity(edge_count as usize);
        for record in body.chunks_exact(RECORD_LEN) {
            let u = u32::from_le_bytes(record[0..4].try_into().unwrap());
            let v = u32::from_le_bytes(record[4..8].try_into().unwrap());
            let w = f64::from_le_bytes(record[8..16].try_into().unwrap());
            triples.push((u, v, w));
        }
        Self::from_sorted_triples(vocab_size, triples)
    }

    fn from_sorted_triples(
        vocab_size: usize,
        triples: Vec<(TokenId, TokenId, f64)>,
    ) -> Result<Self> {
        let mut graph = TransitionGraph::new(vocab_size);
        let mut previous: Option<(TokenId, TokenId)> = None;
        for (u, v, w) in triples {
            validate_ids(&[u, v], vocab_size).map_err(|e| GradError::GraphFormat(e.to_string()))?;
            if !w.is_finite() {
                return Err(GradError::GraphFormat(format!(
                    "edge ({u}, {v}) has non-finite weight {w}"
                )));
            }
            if previous.is_some_and(|p| p >= (u, v)) {
                return Err(GradError::GraphFormat(format!(
                    "edge ({u}, {v}) is out of canonical order or duplicated"
                )));
            }
            previous = Some((u, v));
            graph.edges.entry(u).or_default().insert(v, w);
        }
        Ok(graph)
    }

    /// `{"vocab_size": n, "edges": [[src, dst, weight], ...]}` in canonical order.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&GraphJson {
            vocab_size: self.vocab_size,
            edges: self.edges().collect(),
        })?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let parsed: GraphJson = serde_json::from_str(json)?;
        Self::from_sorted_triples(parsed.vocab_size, parsed.edges)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| GradError::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| GradError::file(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    vocab_size: usize,
    edges: Vec<(TokenId, TokenId, f64)>,
}

fn is_boundary(u: TokenId, v: TokenId) -> bool {
    [u, v].iter().any(|&t| t == BOS || t == EOS)
}

/// Sum of two graphs: weights add, edge sets union.
pub fn merge_graphs(a: &TransitionGraph, b: &TransitionGraph) -> Result<TransitionGraph> {
    let mut merged = a.clone();
    merged.merge_from(b)?;
    Ok(merged)
}

/// Tokenizes every record and accumulates its transition scores.
pub fn build_graph<S, L>(corpus: &[S], vocab: &Vocab, source: &mut L) -> Result<TransitionGraph>
where
    S: AsRef<str>,
    L: LogitSource + ?Sized,
{
    build_graph_with(corpus, vocab, source, GraphBuildOptions::default())
}

pub fn build_graph_with<S, L>(
    corpus: &[S],
    vocab: &Vocab,
    source: &mut L,
    options: GraphBuildOptions,
) -> Result<TransitionGraph>
where
    S: AsRef<str>,
    L: LogitSource + ?Sized,
{
    let sequences: Vec<TokenSequence> = corpus.iter().map(|r| vocab.tokenize(r.as_ref())).collect();
    if vocab.len() != source.vocab_size() {
        return Err(GradError::IncompatibleArtifacts(format!(
            "vocabulary has {} tokens but logit source `{}` declares {}",
            vocab.len(),
            source.name(),
            source.vocab_size()
        )));
    }
    build_graph_from_sequences(&sequences, source, options)
}

pub fn build_graph_from_sequences<L>(
    sequences: &[TokenSequence],
    source: &mut L,
    options: GraphBuildOptions,
) -> Result<TransitionGraph>
where
    L: LogitSource + ?Sized,
{
    let mut graph = TransitionGraph::new(source.vocab_size());
    for seq in sequences {
        if seq.len() < 2 {
            continue;
        }
        let scores: TransitionScores = source.transition_scores(seq)?;
        graph.accumulate_with(seq, &scores, options)?;
    }
    log::debug!(
        "built graph from {} sequences: {} nodes, {} edges",
        sequences.len(),
        graph.node_count(),
        graph.edge_count()
    );
    Ok(graph)
}
