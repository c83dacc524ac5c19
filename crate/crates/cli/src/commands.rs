use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use grad_core::decoder::{generate, write_trace_jsonl, DecoderConfig, NormMode};
use grad_core::eval::{
    generate_benchmark, run_eval, sweep_alpha, sweep_corpus, write_csv, write_json, EvalReport,
    EvalSettings, SyntheticBenchmark, DEFAULT_ALPHAS, DEFAULT_CORRUPTION, DEFAULT_NUM_FACTS,
    DEFAULT_SEED,
};
use grad_core::graph::{build_graph_from_sequences, GraphBuildOptions, TransitionGraph};
use grad_core::registry::{SourceRegistry, SourceSpec};
use grad_core::source::ToyBigramModel;
use grad_core::{GradError, LogitSource, TokenSequence, Vocab};
use log::info;

use crate::config::{pick, FileConfig};
use crate::{
    BenchArgs, BuildArgs, DecodeArgs, EvalArgs, GraphFormat, ReportFormat, SourceArgs, StatsArgs,
    SweepArgs,
};

const DEFAULT_SOURCE: &str = "toy-raw";

fn require(path: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.ok_or_else(|| {
        anyhow!(
            "missing --{flag} (or `{}` in the config file)",
            flag.replace('-', "_")
        )
    })
}

fn has_json_extension(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Non-blank lines of a UTF-8 corpus file. A line that is not valid UTF-8 is
/// reported by its 1-based number.
pub fn read_corpus(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| GradError::File {
        path: path.into(),
        source: e,
    })?;
    let mut records = Vec::new();
    for (i, line) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        let text = std::str::from_utf8(line).map_err(|e| GradError::MalformedCorpus {
            line: i + 1,
            reason: format!("invalid UTF-8 after byte {}", e.valid_up_to()),
        })?;
        if !text.trim().is_empty() {
            records.push(text.to_owned());
        }
    }
    Ok(records)
}

fn load_graph(path: &Path) -> Result<TransitionGraph> {
    if has_json_extension(path) {
        let text = fs::read_to_string(path).map_err(|e| GradError::File {
            path: path.into(),
            source: e,
        })?;
        TransitionGraph::from_json(&text).with_context(|| format!("reading {}", path.display()))
    } else {
        TransitionGraph::load(path).with_context(|| format!("reading {}", path.display()))
    }
}

fn save_graph(graph: &TransitionGraph, path: &Path, format: Option<GraphFormat>) -> Result<()> {
    let json = match format {
        Some(f) => f == GraphFormat::Json,
        None => has_json_extension(path),
    };
    if json {
        fs::write(path, graph.to_json()? + "\n").map_err(|e| GradError::File {
            path: path.into(),
            source: e,
        })?;
    } else {
        graph.save(path)?;
    }
    Ok(())
}

fn source_name(args: &SourceArgs, file: &FileConfig) -> String {
    if let Some(name) = pick(args.source.clone(), &file.source) {
        return name;
    }
    if pick(args.bridge_cmd.clone(), &file.bridge_cmd).is_some() {
        "bridge".into()
    } else if pick(args.replay.clone(), &file.replay).is_some() {
        "replay".into()
    } else {
        DEFAULT_SOURCE.into()
    }
}

/// Toy sources are fitted on the corpus and define the vocabulary; every
/// other source comes with its own.
fn fits_on_corpus(name: &str) -> bool {
    name.starts_with("toy")
}

fn open_source(
    name: &str,
    args: &SourceArgs,
    file: &FileConfig,
    vocab: &Vocab,
    corpus: &[TokenSequence],
) -> Result<Box<dyn LogitSource>> {
    let mut spec = SourceSpec::new(vocab, corpus);
    spec.smoothing =
        pick(args.smoothing, &file.smoothing).unwrap_or(ToyBigramModel::DEFAULT_SMOOTHING);
    if let Some(floor) = pick(args.raw_floor, &file.raw_floor) {
        spec.raw_floor = floor;
    }
    spec.replay_path = pick(args.replay.clone(), &file.replay);
    spec.bridge_cmd = pick(args.bridge_cmd.clone(), &file.bridge_cmd);
    if let Some(secs) = pick(args.bridge_timeout, &file.bridge_timeout_secs) {
        spec.bridge_timeout = Duration::try_from_secs_f64(secs)
            .map_err(|_| anyhow!("invalid bridge timeout {secs}"))?;
    }
    let source = SourceRegistry::with_builtins().create(name, &spec)?;
    info!(
        "logit source `{}` over {} tokens",
        source.name(),
        source.vocab_size()
    );
    Ok(source)
}

fn norm_mode(flag: &Option<String>, file: &FileConfig) -> Result<NormMode> {
    Ok(match pick(flag.clone(), &file.norm_mode) {
        Some(s) => s.parse()?,
        None => NormMode::default(),
    })
}

pub fn build_graph(args: &BuildArgs, file: &FileConfig) -> Result<()> {
    let corpus_path = require(pick(args.corpus.clone(), &file.corpus), "corpus")?;
    let graph_path = require(
        pick(args.graph.clone(), &file.graph).or_else(|| file.out.clone()),
        "graph",
    )?;
    let records = read_corpus(&corpus_path)?;
    info!("{} records from {}", records.len(), corpus_path.display());

    let name = source_name(&args.source, file);
    let vocab_flag = pick(args.vocab.clone(), &file.vocab);
    let vocab = if fits_on_corpus(&name) {
        let vocab = Vocab::build(&records);
        let path = vocab_flag.unwrap_or_else(|| graph_path.with_extension("vocab.json"));
        vocab.save(&path)?;
        info!(
            "wrote vocabulary of {} tokens to {}",
            vocab.len(),
            path.display()
        );
        vocab
    } else {
        let path = require(vocab_flag, "vocab")?;
        Vocab::load(&path)?
    };
    let seqs: Vec<TokenSequence> = records.iter().map(|r| vocab.tokenize(r)).collect();
    let mut source = open_source(&name, &args.source, file, &vocab, &seqs)?;
    let options = GraphBuildOptions {
        skip_boundaries: args.skip_boundaries || file.skip_boundaries.unwrap_or(false),
    };
    let graph = build_graph_from_sequences(&seqs, &mut source, options)?;
    save_graph(&graph, &graph_path, args.format)?;
    info!("wrote graph to {}", graph_path.display());

    let stats = graph.stats(records.len());
    println!(
        "nodes={} edges={} ratio={:.6}",
        stats.nodes, stats.edges, stats.edge_node_ratio
    );
    Ok(())
}

pub fn decode(args: &DecodeArgs, file: &FileConfig) -> Result<()> {
    let vocab_path = require(pick(args.vocab.clone(), &file.vocab), "vocab")?;
    let graph_path = require(pick(args.graph.clone(), &file.graph), "graph")?;
    let vocab = Vocab::load(&vocab_path)?;
    let graph = load_graph(&graph_path)?;
    if graph.vocab_size() != vocab.len() {
        return Err(GradError::IncompatibleArtifacts(format!(
            "graph {} covers {} tokens but vocabulary {} has {}",
            graph_path.display(),
            graph.vocab_size(),
            vocab_path.display(),
            vocab.len()
        ))
        .into());
    }

    let name = source_name(&args.source, file);
    let seqs: Vec<TokenSequence> = if fits_on_corpus(&name) {
        let corpus = require(pick(args.corpus.clone(), &file.corpus), "corpus")
            .context("toy sources are refitted on the corpus")?;
        read_corpus(&corpus)?
            .iter()
            .map(|r| vocab.tokenize(r))
            .collect()
    } else {
        Vec::new()
    };
    let mut source = open_source(&name, &args.source, file, &vocab, &seqs)?;

    let config = DecoderConfig {
        alpha: pick(args.alpha, &file.alpha).unwrap_or(1.0),
        norm_mode: norm_mode(&args.norm_mode, file)?,
        max_tokens: pick(args.max_tokens, &file.max_tokens).unwrap_or(64),
        keep_vectors: args.trace.is_some() && args.trace_top_k > 0,
        ..DecoderConfig::default()
    };
    let prompt = vocab.tokenize_prompt(&args.prompt);
    let run = generate(&mut source, &graph, &prompt, &config)?;
    println!("{}", vocab.detokenize(&run.tokens)?);

    if let Some(path) = pick(args.trace.clone(), &file.trace) {
        let out = File::create(&path).map_err(|e| GradError::File {
            path: path.clone(),
            source: e,
        })?;
        let mut out = BufWriter::new(out);
        write_trace_jsonl(&run.traces, args.trace_top_k, &mut out)?;
        out.flush()?;
        info!(
            "wrote {} trace lines to {}",
            run.traces.len(),
            path.display()
        );
    }
    Ok(())
}

struct Bench {
    bench: SyntheticBenchmark,
    settings: EvalSettings,
}

fn prepare_bench(args: &BenchArgs, file: &FileConfig) -> Result<Bench> {
    let num_facts = pick(args.num_facts, &file.num_facts).unwrap_or(DEFAULT_NUM_FACTS);
    let p = pick(args.p, &file.p).unwrap_or(DEFAULT_CORRUPTION);
    let seed = pick(args.seed, &file.seed).unwrap_or(DEFAULT_SEED);
    let bench = generate_benchmark(num_facts, p, seed)?;
    let defaults = EvalSettings::default();
    let settings = EvalSettings {
        norm_mode: norm_mode(&args.norm_mode, file)?,
        smoothing: pick(args.smoothing, &file.smoothing).unwrap_or(defaults.smoothing),
        record_runtime: !args.no_timing,
        jobs: pick(args.jobs, &file.jobs).unwrap_or(1),
        ..defaults
    };
    if settings.jobs == 0 {
        bail!("jobs must be at least 1");
    }
    info!(
        "benchmark: {num_facts} facts, p={p}, seed={seed}, {} corrupted",
        bench.corrupted.len()
    );
    Ok(Bench { bench, settings })
}

fn write_reports(reports: &[EvalReport], args: &BenchArgs, file: &FileConfig) -> Result<()> {
    let out = pick(args.out.clone(), &file.out);
    let format = match (args.format, &out) {
        (Some(f), _) => f,
        (None, Some(path)) if has_json_extension(path) => ReportFormat::Json,
        _ => ReportFormat::Csv,
    };
    let mut buf = Vec::new();
    match format {
        ReportFormat::Csv => write_csv(reports, &mut buf)?,
        ReportFormat::Json => write_json(reports, &mut buf)?,
    }
    match out {
        Some(path) => {
            fs::write(&path, buf).map_err(|e| GradError::File {
                path: path.clone(),
                source: e,
            })?;
            info!("wrote {} rows to {}", reports.len(), path.display());
        }
        None => io::stdout().lock().write_all(&buf)?,
    }
    Ok(())
}

pub fn eval(args: &EvalArgs, file: &FileConfig) -> Result<()> {
    let Bench { bench, settings } = prepare_bench(&args.bench, file)?;
    let alpha = pick(args.alpha, &file.alpha).unwrap_or(1.0);
    let size = pick(args.graph_size, &file.graph_size).unwrap_or(bench.truthful_corpus.len());
    let report = run_eval(&bench, alpha, size, &settings)?;
    write_reports(&[report], &args.bench, file)
}

pub fn sweep(args: &SweepArgs, file: &FileConfig) -> Result<()> {
    let Bench { bench, settings } = prepare_bench(&args.bench, file)?;
    let alphas = pick(args.alphas.clone(), &file.alphas);
    let sizes = pick(args.sizes.clone(), &file.sizes);
    let reports = match (alphas, sizes) {
        (Some(_), Some(_)) => bail!("give either alphas or sizes, not both"),
        (alphas, None) => {
            let alphas = alphas.unwrap_or_else(|| DEFAULT_ALPHAS.to_vec());
            let size =
                pick(args.graph_size, &file.graph_size).unwrap_or(bench.truthful_corpus.len());
            sweep_alpha(&bench, &alphas, size, &settings)?
        }
        (None, Some(sizes)) => {
            let alpha = pick(args.alpha, &file.alpha).unwrap_or(1.0);
            let (reports, stats) = sweep_corpus(&bench, &sizes, alpha, &settings)?;
            for s in &stats {
                info!(
                    "|D|={} nodes={} edges={} ratio={:.6}",
                    s.corpus_size, s.nodes, s.edges, s.edge_node_ratio
                );
            }
            reports
        }
    };
    write_reports(&reports, &args.bench, file)
}

pub fn stats(args: &StatsArgs, file: &FileConfig) -> Result<()> {
    let graph_path = require(pick(args.graph.clone(), &file.graph), "graph")?;
    let graph = load_graph(&graph_path)?;
    let mut out = io::stdout().lock();
    if args.dump_json {
        writeln!(out, "{}", graph.to_json()?)?;
        return Ok(());
    }
    let stats = graph.stats(0);
    let total: f64 = graph.edges().map(|(_, _, w)| w).sum();
    writeln!(
        out,
        "vocab_size={} nodes={} edges={} ratio={:.6} total_weight={}",
        graph.vocab_size(),
        stats.nodes,
        stats.edges,
        stats.edge_node_ratio,
        total
    )?;
    if args.top > 0 {
        let vocab = match pick(args.vocab.clone(), &file.vocab) {
            Some(path) => Some(Vocab::load(&path)?),
            None => None,
        };
        let name = |id| match &vocab {
            Some(v) => v
                .token(id)
                .map(str::to_owned)
                .unwrap_or_else(|| id.to_string()),
            None => id.to_string(),
        };
        let mut edges: Vec<_> = graph.edges().collect();
        edges.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        for (u, v, w) in edges.into_iter().take(args.top) {
            writeln!(out, "{}\t{}\t{}", name(u), name(v), w)?;
        }
    }
    Ok(())
}
