//! Planted-fact benchmark and ablation sweeps.
//!
//! Each fact is a record `q <key> <value>`. The "hallucinating" model is a toy
//! bigram model fitted on a corrupted copy of the facts in which a fraction
//! `p` of the values were swapped for distractors; the transition graph is
//! built from the truthful records, scored by that same corrupted model.
//! Every question prompts with `q <key>` and is scored by exact match of the
//! first generated token against the true value.

use std::fmt;
use std::io::Write;
use std::thread;
use std::time::Instant;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{generate, DecoderConfig, NormMode};
use crate::error::{GradError, Result};
use crate::graph::{build_graph_from_sequences, GraphBuildOptions, GraphStats, TransitionGraph};
use crate::source::{LogitForm, LogitSource, ToyBigramModel};
use crate::vocab::{TokenId, TokenSequence, Vocab};

pub const DEFAULT_NUM_FACTS: usize = 200;
pub const DEFAULT_CORRUPTION: f64 = 0.5;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_ALPHAS: [f64; 5] = [0.0, 0.1, 0.5, 1.0, 2.0];
pub const DEFAULT_CORPUS_SIZES: [usize; 4] = [10, 50, 100, 200];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub prompt: String,
    pub gold: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBenchmark {
    pub truthful_corpus: Vec<String>,
    pub corrupted_corpus: Vec<String>,
    pub questions: Vec<Question>,
    /// Indices of the facts whose value was replaced in the corrupted corpus.
    pub corrupted: Vec<usize>,
    pub seed: u64,
    pub p: f64,
}

/// Deterministic for a given `(num_facts, p, seed)`. Exactly `floor(p * n)`
/// facts are corrupted.
pub fn generate_benchmark(num_facts: usize, p: f64, seed: u64) -> Result<SyntheticBenchmark> {
    if num_facts == 0 {
        return Err(GradError::Parameter("num_facts must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(GradError::Parameter(format!(
            "corruption fraction p must lie in [0, 1], got {p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<String> = (0..num_facts).map(|i| format!("v{i}")).collect();
    let mut distractors: Vec<String> = (0..num_facts).map(|i| format!("d{i}")).collect();
    values.shuffle(&mut rng);
    distractors.shuffle(&mut rng);

    let n_corrupt = (p * num_facts as f64).floor() as usize;
    let mut corrupted = sample(&mut rng, num_facts, n_corrupt).into_vec();
    corrupted.sort_unstable();
    let mut is_corrupt = vec![false; num_facts];
    for &i in &corrupted {
        is_corrupt[i] = true;
    }

    let mut truthful_corpus = Vec::with_capacity(num_facts);
    let mut corrupted_corpus = Vec::with_capacity(num_facts);
    let mut questions = Vec::with_capacity(num_facts);
    for i in 0..num_facts {
        let key = format!("k{i}");
        truthful_corpus.push(format!("q {key} {}", values[i]));
        let shown = if is_corrupt[i] {
            &distractors[i]
        } else {
            &values[i]
        };
        corrupted_corpus.push(format!("q {key} {shown}"));
        questions.push(Question {
            prompt: format!("q {key}"),
            gold: values[i].clone(),
        });
    }
    Ok(SyntheticBenchmark {
        truthful_corpus,
        corrupted_corpus,
        questions,
        corrupted,
        seed,
        p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Greedy,
    Grad,
}

impl Method {
    pub fn for_alpha(alpha: f64) -> Self {
        if alpha == 0.0 {
            Method::Greedy
        } else {
            Method::Grad
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Greedy => "greedy",
            Method::Grad => "grad",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub alpha: f64,
    pub corpus_size: usize,
    pub exact_match: f64,
    pub graph_stats: GraphStats,
    pub runtime_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub norm_mode: NormMode,
    pub smoothing: f64,
    pub logit_form: LogitForm,
    pub max_tokens: usize,
    pub graph_options: GraphBuildOptions,
    /// When false every report carries `runtime_ms = 0`, making output
    /// byte-reproducible.
    pub record_runtime: bool,
    /// Worker threads for sweeps; rows are always returned in input order.
    pub jobs: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            norm_mode: NormMode::Intent,
            smoothing: ToyBigramModel::DEFAULT_SMOOTHING,
            logit_form: LogitForm::raw(),
            max_tokens: 2,
            graph_options: GraphBuildOptions::default(),
            record_runtime: true,
            jobs: 1,
        }
    }
}

/// Vocabulary, corrupted model and tokenized prompts shared by every row.
#[derive(Debug, Clone)]
pub struct EvalContext {
    settings: EvalSettings,
    vocab: Vocab,
    model: ToyBigramModel,
    truthful: Vec<TokenSequence>,
    prompts: Vec<(TokenSequence, TokenId)>,
}

impl EvalContext {
    pub fn prepare(bench: &SyntheticBenchmark, settings: &EvalSettings) -> Result<Self> {
        let all_records: Vec<&str> = bench
            .truthful_corpus
            .iter()
            .chain(&bench.corrupted_corpus)
            .map(String::as_str)
            .collect();
        let vocab = Vocab::build(&all_records);
        let corrupted: Vec<TokenSequence> = bench
            .corrupted_corpus
            .iter()
            .map(|r| vocab.tokenize(r))
            .collect();
        let model = ToyBigramModel::fit(&corrupted, vocab.len(), settings.smoothing)?
            .with_form(settings.logit_form);
        let truthful = bench
            .truthful_corpus
            .iter()
            .map(|r| vocab.tokenize(r))
            .collect();
        let prompts = bench
            .questions
            .iter()
            .map(|q| {
                let gold = vocab.id(&q.gold).ok_or_else(|| {
                    GradError::Parameter(format!(
                        "gold answer {:?} is not in the vocabulary",
                        q.gold
                    ))
                })?;
                Ok((vocab.tokenize_prompt(&q.prompt), gold))
            })
            .collect::<Result<_>>()?;
        Ok(EvalContext {
            settings: settings.clone(),
            vocab,
            model,
            truthful,
            prompts,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn model(&self) -> &ToyBigramModel {
        &self.model
    }

    /// Graph over the first `size` truthful records.
    pub fn build_graph(&self, size: usize) -> Result<TransitionGraph> {
        self.check_size(size)?;
        let mut scorer = self.model.clone();
        build_graph_from_sequences(
            &self.truthful[..size],
            &mut scorer,
            self.settings.graph_options,
        )
    }

    /// Graphs over nested prefixes, accumulated incrementally.
    pub fn build_nested_graphs(&self, sizes: &[usize]) -> Result<Vec<TransitionGraph>> {
        if sizes.windows(2).any(|w| w[0] > w[1]) {
            return Err(GradError::Parameter(format!(
                "corpus sizes must be ascending, got {sizes:?}"
            )));
        }
        let mut scorer = self.model.clone();
        let mut graph = TransitionGraph::new(self.vocab.len());
        let mut done = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &size in sizes {
            self.check_size(size)?;
            let part = build_graph_from_sequences(
                &self.truthful[done..size],
                &mut scorer,
                self.settings.graph_options,
            )?;
            graph.merge_from(&part)?;
            done = size;
            out.push(graph.clone());
        }
        Ok(out)
    }

    fn check_size(&self, size: usize) -> Result<()> {
        if size > self.truthful.len() {
            return Err(GradError::Parameter(format!(
                "graph corpus size {size} exceeds the {} truthful records",
                self.truthful.len()
            )));
        }
        Ok(())
    }

    /// Decodes every question against `graph` and scores first-token matches.
    pub fn evaluate(
        &self,
        graph: &TransitionGraph,
        corpus_size: usize,
        alpha: f64,
    ) -> Result<EvalReport> {
        let started = Instant::now();
        let config = DecoderConfig {
            alpha,
            norm_mode: self.settings.norm_mode,
            max_tokens: self.settings.max_tokens,
            ..DecoderConfig::default()
        };
        let mut model = self.model.clone();
        let mut matches = 0usize;
        for (prompt, gold) in &self.prompts {
            let generation = generate(&mut model, graph, prompt, &config)?;
            if generation.tokens.first() == Some(gold) {
                matches += 1;
            }
        }
        let runtime_ms = if self.settings.record_runtime {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        Ok(EvalReport {
            method: Method::for_alpha(alpha),
            alpha,
            corpus_size,
            exact_match: matches as f64 / self.prompts.len() as f64,
            graph_stats: graph.stats(corpus_size),
            runtime_ms,
        })
    }

    pub fn num_questions(&self) -> usize {
        self.prompts.len()
    }

    /// A fresh copy of the corrupted model as a boxed source.
    pub fn source(&self) -> Box<dyn LogitSource> {
        Box::new(self.model.clone())
    }
}

pub fn run_eval(
    bench: &SyntheticBenchmark,
    alpha: f64,
    graph_corpus_size: usize,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    let ctx = EvalContext::prepare(bench, settings)?;
    let graph = ctx.build_graph(graph_corpus_size)?;
    ctx.evaluate(&graph, graph_corpus_size, alpha)
}

/// One row per alpha over a single graph built from `graph_corpus_size`
/// truthful records.
pub fn sweep_alpha(
    bench: &SyntheticBenchmark,
    alphas: &[f64],
    graph_corpus_size: usize,
    settings: &EvalSettings,
) -> Result<Vec<EvalReport>> {
    if alphas.is_empty() {
        return Err(GradError::Parameter("alpha grid is empty".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(GradError::Parameter(format!(
            "alpha must be non-negative, got {a}"
        )));
    }
    let ctx = EvalContext::prepare(bench, settings)?;
    let graph = ctx.build_graph(graph_corpus_size)?;
    parallel_map(alphas, settings.jobs, |&alpha| {
        ctx.evaluate(&graph, graph_corpus_size, alpha)
    })
}

/// One row per corpus size, graphs built on nested prefixes of the truthful
/// corpus. Returns the reports and the per-size graph statistics.
pub fn sweep_corpus(
    bench: &SyntheticBenchmark,
    sizes: &[usize],
    alpha: f64,
    settings: &EvalSettings,
) -> Result<(Vec<EvalReport>, Vec<GraphStats>)> {
    if sizes.is_empty() {
        return Err(GradError::Parameter("corpus size grid is empty".into()));
    }
    let ctx = EvalContext::prepare(bench, settings)?;
    let graphs = ctx.build_nested_graphs(sizes)?;
    let stats = graphs.iter().zip(sizes).map(|(g, &n)| g.stats(n)).collect();
    let rows: Vec<(usize, &TransitionGraph)> = sizes.iter().copied().zip(&graphs).collect();
    let reports = parallel_map(&rows, settings.jobs, |&(size, graph)| {
        ctx.evaluate(graph, size, alpha)
    })?;
    Ok((reports, stats))
}

fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let mut slots: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|worker| {
                let f = &f;
                scope.spawn(move || {
                    items
                        .iter()
                        .enumerate()
                        .skip(worker)
                        .step_by(jobs)
                        .map(|(i, item)| (i, f(item)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for handle in handles {
            for (i, result) in handle.join().expect("sweep worker panicked") {
                slots[i] = Some(result);
            }
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every row evaluated"))
        .collect()
}

pub const CSV_HEADER: [&str; 8] = [
    "method",
    "alpha",
    "corpus_size",
    "exact_match",
    "nodes",
    "edges",
    "ratio",
    "runtime_ms",
];

pub fn write_csv<W: Write>(reports: &[EvalReport], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(CSV_HEADER)?;
    for r in reports {
        writer.write_record([
            r.method.to_string(),
            r.alpha.to_string(),
            r.corpus_size.to_string(),
            r.exact_match.to_string(),
            r.graph_stats.nodes.to_string(),
            r.graph_stats.edges.to_string(),
            r.graph_stats.edge_node_ratio.to_string(),
            r.runtime_ms.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(reports: &[EvalReport], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, reports)?;
    out.write_all(b"\n")?;
    Ok(())
}
