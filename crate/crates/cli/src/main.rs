use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::FileConfig;

/// Graph-retrieved adaptive decoding: build token transition graphs from a
/// corpus and use them to steer greedy decoding.
#[derive(Debug, Parser)]
#[command(name = "grad", version)]
struct Cli {
    /// TOML file with defaults for any flag. Flags given here take priority.
    #[arg(long, global = true, env = "GRAD_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a transition graph (and vocabulary) from a corpus.
    BuildGraph(BuildArgs),
    /// Decode a continuation of a prompt with graph fusion.
    Decode(DecodeArgs),
    /// Score one configuration on the synthetic planted-fact benchmark.
    Eval(EvalArgs),
    /// Sweep fusion weights or graph corpus sizes on the benchmark.
    Sweep(SweepArgs),
    /// Print statistics for a graph file.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphFormat {
    Binary,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Logit source: toy, toy-raw, replay or bridge [default: toy-raw, or
    /// bridge/replay when --bridge-cmd/--replay is given]
    #[arg(long)]
    pub source: Option<String>,
    /// Add-k smoothing of the toy model [default: 1]
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// Logit of an unseen continuation under toy-raw [default: 1]
    #[arg(long)]
    pub raw_floor: Option<f64>,
    /// JSON file of scripted logit vectors for the replay source
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Shell command starting an external logit server
    #[arg(long)]
    pub bridge_cmd: Option<String>,
    /// Seconds to wait for each bridge reply [default: 30]
    #[arg(long)]
    pub bridge_timeout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Corpus file, one UTF-8 record per line
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Vocabulary JSON. Written for toy sources, read for the others
    /// [default: next to the graph, with extension .vocab.json]
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Output graph file
    #[arg(long, visible_alias = "out")]
    pub graph: Option<PathBuf>,
    /// Graph file format [default: json for *.json paths, else binary]
    #[arg(long, value_enum)]
    pub format: Option<GraphFormat>,
    /// Leave out edges touching the sequence start and end markers
    #[arg(long)]
    pub skip_boundaries: bool,
    #[command(flatten)]
    pub source: SourceArgs,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Prompt text
    pub prompt: String,
    /// Corpus the toy sources are fitted on
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Weight of the graph logits [default: 1]
    #[arg(long, value_parser = non_negative)]
    pub alpha: Option<f64>,
    /// intent or literal [default: intent]
    #[arg(long)]
    pub norm_mode: Option<String>,
    /// Maximum number of generated tokens [default: 64]
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// Write one JSON line per decoding step to this file
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Candidates per vector kept in trace lines; 0 keeps none
    #[arg(long, default_value_t = grad_core::decoder::DEFAULT_TRACE_TOP_K)]
    pub trace_top_k: usize,
    #[command(flatten)]
    pub source: SourceArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Number of planted facts [default: 200]
    #[arg(long, value_parser = positive)]
    pub num_facts: Option<usize>,
    /// Fraction of facts corrupted in the model's training data [default: 0.5]
    #[arg(long, value_parser = fraction)]
    pub p: Option<f64>,
    /// Benchmark seed [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// intent or literal [default: intent]
    #[arg(long)]
    pub norm_mode: Option<String>,
    /// Add-k smoothing of the model [default: 1]
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// Worker threads for independent rows [default: 1]
    #[arg(long, value_parser = positive)]
    pub jobs: Option<usize>,
    /// Report file [default: standard output]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report format [default: json for *.json paths, else csv]
    #[arg(long, value_enum)]
    pub format: Option<ReportFormat>,
    /// Write 0 in the runtime column so reruns are byte-identical
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Weight of the graph logits; 0 is plain greedy [default: 1]
    #[arg(long, value_parser = non_negative)]
    pub alpha: Option<f64>,
    /// Number of truthful records the graph is built from [default: all]
    #[arg(long, value_parser = positive)]
    pub graph_size: Option<usize>,
    #[command(flatten)]
    pub bench: BenchArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Fusion weights to sweep [default: 0,0.1,0.5,1,2]
    #[arg(long, value_delimiter = ',', value_parser = non_negative, conflicts_with = "sizes")]
    pub alphas: Option<Vec<f64>>,
    /// Graph corpus sizes to sweep instead of weights, e.g. 10,50,100,200
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    pub sizes: Option<Vec<usize>>,
    /// Fusion weight used by a size sweep [default: 1]
    #[arg(long, value_parser = non_negative)]
    pub alpha: Option<f64>,
    /// Graph corpus size used by a weight sweep [default: all]
    #[arg(long, value_parser = positive)]
    pub graph_size: Option<usize>,
    #[command(flatten)]
    pub bench: BenchArgs,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Graph file to inspect
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Vocabulary used to print token strings for the heaviest edges
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Number of heaviest edges to list
    #[arg(long, default_value_t = 0)]
    pub top: usize,
    /// Print the whole graph in the JSON debug format instead
    #[arg(long)]
    pub dump_json: bool,
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.is_finite() => Ok(x),
        Ok(_) => Err("must be a finite number >= 0".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn fraction(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if (0.0..=1.0).contains(&x) => Ok(x),
        Ok(_) => Err("must lie in [0, 1]".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRAD_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("grad: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::BuildGraph(args) => commands::build_graph(&args, &file),
        Command::Decode(args) => commands::decode(&args, &file),
        Command::Eval(args) => commands::eval(&args, &file),
        Command::Sweep(args) => commands::sweep(&args, &file),
        Command::Stats(args) => commands::stats(&args, &file),
    }
}
