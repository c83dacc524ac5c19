//! Acceptance gate. Runs every headline criterion at its tolerance and time
//! budget and prints one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use grad_core::bridge::BridgeClient;
use grad_core::decoder::{generate, max_normalize, DecoderConfig, LiteralNormalizer, NormMode};
use grad_core::eval::{
    generate_benchmark, sweep_alpha, sweep_corpus, EvalSettings, Method, DEFAULT_ALPHAS,
    DEFAULT_CORPUS_SIZES, DEFAULT_CORRUPTION, DEFAULT_NUM_FACTS, DEFAULT_SEED,
};
use grad_core::graph::{build_graph, TransitionGraph};
use grad_core::source::{LogitForm, ToyBigramModel};
use grad_core::vocab::EOS;
use grad_core::{LogitSource, LogitVector, TokenId, TokenSequence, Vocab};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 10] = [
    "the", "cat", "sat", "on", "mat", "dog", "ran", "to", "a", ".",
];

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

fn random_corpus(rng: &mut ChaCha8Rng, max_records: usize) -> Vec<String> {
    let n = rng.gen_range(0..=max_records);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(0..12);
            (0..len)
                .map(|_| *WORDS.choose(rng).unwrap())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

fn random_form(rng: &mut ChaCha8Rng) -> LogitForm {
    if rng.gen_bool(0.5) {
        LogitForm::LogProb
    } else {
        LogitForm::Raw {
            floor: rng.gen_range(0.1..3.0),
        }
    }
}

fn fit(records: &[String], vocab: &Vocab, k: f64, form: LogitForm) -> ToyBigramModel {
    let seqs: Vec<TokenSequence> = records.iter().map(|r| vocab.tokenize(r)).collect();
    ToyBigramModel::fit(&seqs, vocab.len(), k)
        .unwrap()
        .with_form(form)
}

/// Plain greedy decoding written against the logit interface only.
fn reference_greedy(
    source: &mut dyn LogitSource,
    prompt: &[TokenId],
    max_tokens: usize,
) -> Vec<TokenId> {
    let mut seq = prompt.to_vec();
    for _ in 0..max_tokens {
        let logits = source.next_logits(&seq).unwrap();
        let mut best = 0;
        for (i, &x) in logits.iter().enumerate() {
            if x > logits[best] {
                best = i;
            }
        }
        seq.push(best as TokenId);
        if best as TokenId == EOS {
            break;
        }
    }
    seq[prompt.len()..].to_vec()
}

fn greedy_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut instances = 0;
    while instances < 120 {
        let records = random_corpus(&mut rng, 30);
        let vocab = Vocab::build(&records);
        let mut model = fit(
            &records,
            &vocab,
            rng.gen_range(0.2..3.0),
            random_form(&mut rng),
        );
        let graph = build_graph(&records, &vocab, &mut model).unwrap();
        let edgeless = TransitionGraph::new(vocab.len());
        let words: Vec<&str> = (0..rng.gen_range(0..4))
            .map(|_| *WORDS.choose(&mut rng).unwrap())
            .collect();
        let prompt = vocab.tokenize_prompt(&words.join(" "));
        let max_tokens = rng.gen_range(1..20);
        let expected = reference_greedy(&mut model, &prompt, max_tokens);

        let zero = DecoderConfig {
            alpha: 0.0,
            max_tokens,
            ..DecoderConfig::default()
        };
        let got = generate(&mut model, &graph, &prompt, &zero).unwrap();
        assert_eq!(got.tokens, expected, "alpha 0 on {records:?}");

        let alpha = rng.gen_range(0.0..10.0);
        for norm_mode in [NormMode::Intent, NormMode::Literal] {
            let config = DecoderConfig {
                alpha,
                norm_mode,
                max_tokens,
                ..DecoderConfig::default()
            };
            let got = generate(&mut model, &edgeless, &prompt, &config).unwrap();
            assert_eq!(got.tokens, expected, "edgeless graph at alpha {alpha}");
        }
        instances += 1;
    }
}

fn construction_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..60 {
        let records = random_corpus(&mut rng, 50);
        let vocab = Vocab::build(&records);
        let mut model = fit(
            &records,
            &vocab,
            rng.gen_range(0.2..3.0),
            random_form(&mut rng),
        );
        let graph = build_graph(&records, &vocab, &mut model).unwrap();

        // naive re-accumulation: dense logits at every prefix, one pair at a time
        let mut oracle: BTreeMap<(TokenId, TokenId), f64> = BTreeMap::new();
        for record in &records {
            let c = vocab.tokenize(record);
            for i in 0..c.len() - 1 {
                let z = model.next_logits(&c[..=i]).unwrap();
                *oracle.entry((c[i], c[i + 1])).or_insert(0.0) += z[c[i + 1] as usize];
            }
        }
        let built: BTreeMap<_, _> = graph.edges().map(|(u, v, w)| ((u, v), w)).collect();
        assert_eq!(
            built.keys().collect::<Vec<_>>(),
            oracle.keys().collect::<Vec<_>>()
        );
        for (key, w) in &built {
            assert!(
                close(*w, oracle[key], 1e-9),
                "{key:?}: {w} vs {}",
                oracle[key]
            );
        }
    }
}

fn normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut active = 0;
    for _ in 0..2000 {
        let n = rng.gen_range(1..50);
        let graph: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.3) {
                    0.0
                } else {
                    rng.gen_range(-5.0..60.0)
                }
            })
            .collect();
        let model: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..40.0)).collect();
        let (norm, scale) = max_normalize(
            &LogitVector::new(graph).unwrap(),
            &LogitVector::new(model.clone()).unwrap(),
            NormMode::Intent.normalizer(),
        )
        .unwrap();
        if scale > 0.0 {
            active += 1;
            let peak = norm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let target = model.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(close(peak, target, 1e-9), "{peak} vs {target}");
        } else {
            assert!(norm.iter().all(|&x| x == 0.0));
        }
    }
    assert!(active > 500);

    let graph = LogitVector::new(vec![0.0, 2.0, 4.0]).unwrap();
    let model = LogitVector::new(vec![8.0, 1.0, 3.0]).unwrap();
    let (norm, scale) = max_normalize(&graph, &model, &LiteralNormalizer).unwrap();
    assert_eq!(norm.as_slice(), &[0.0, 1.0, 2.0]);
    assert_eq!(scale, 0.5);
}

fn settings() -> EvalSettings {
    EvalSettings {
        record_runtime: false,
        ..EvalSettings::default()
    }
}

fn planted_fact() {
    let bench = generate_benchmark(DEFAULT_NUM_FACTS, DEFAULT_CORRUPTION, DEFAULT_SEED).unwrap();
    let rows = sweep_alpha(&bench, &DEFAULT_ALPHAS, DEFAULT_NUM_FACTS, &settings()).unwrap();
    let greedy = rows.iter().find(|r| r.alpha == 0.0).unwrap();
    let grad = rows.iter().find(|r| r.alpha == 1.0).unwrap();
    assert_eq!(greedy.method, Method::Greedy);
    let summary: Vec<String> = rows
        .iter()
        .map(|r| format!("{}:{:.3}", r.alpha, r.exact_match))
        .collect();
    println!("    alpha sweep {}", summary.join(" "));
    assert!(
        grad.exact_match - greedy.exact_match >= 0.20,
        "gap {} - {}",
        grad.exact_match,
        greedy.exact_match
    );
    let best = rows
        .iter()
        .map(|r| r.exact_match)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(rows.iter().any(|r| r.alpha > 0.0 && r.exact_match == best));
    assert!(best > greedy.exact_match);
}

fn densification() {
    let bench = generate_benchmark(DEFAULT_NUM_FACTS, DEFAULT_CORRUPTION, DEFAULT_SEED).unwrap();
    let (_, stats) = sweep_corpus(&bench, &DEFAULT_CORPUS_SIZES, 1.0, &settings()).unwrap();
    let summary: Vec<String> = stats
        .iter()
        .map(|s| format!("{}:{:.3}", s.corpus_size, s.edge_node_ratio))
        .collect();
    println!("    edges/nodes {}", summary.join(" "));

    // recount from the raw truthful records
    for s in &stats {
        let mut nodes = std::collections::BTreeSet::new();
        let mut edges = std::collections::BTreeSet::new();
        for record in &bench.truthful_corpus[..s.corpus_size] {
            let mut tokens = vec!["<bos>"];
            tokens.extend(record.split_whitespace());
            tokens.push("<eos>");
            for pair in tokens.windows(2) {
                nodes.insert(pair[0]);
                nodes.insert(pair[1]);
                edges.insert((pair[0], pair[1]));
            }
        }
        assert_eq!((s.nodes, s.edges), (nodes.len(), edges.len()));
    }
    assert!(stats
        .windows(2)
        .all(|w| w[1].edge_node_ratio >= w[0].edge_node_ratio));
    assert!(stats.last().unwrap().edge_node_ratio > stats[0].edge_node_ratio);
}

fn serialization() {
    let text = fs::read_to_string(fixture("two_records.txt")).unwrap();
    let records: Vec<String> = text.lines().map(str::to_owned).collect();
    let vocab = Vocab::build(&records);
    let mut model = fit(&records, &vocab, 1.0, LogitForm::raw());
    let graph = build_graph(&records, &vocab, &mut model).unwrap();
    let bytes = graph.to_bytes().unwrap();
    assert_eq!(bytes, fs::read(fixture("two_records.gttg")).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.gttg");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let n = rng.gen_range(2..64);
        let mut g = TransitionGraph::new(n);
        for _ in 0..rng.gen_range(0..200) {
            let w = f64::from_bits(rng.gen::<u64>());
            let w = if w.is_finite() { w } else { rng.gen() };
            g.accumulate_sequence(
                &[rng.gen_range(0..n as u32), rng.gen_range(0..n as u32)],
                &[w],
            )
            .unwrap();
        }
        g.save(&path).unwrap();
        let back = TransitionGraph::load(&path).unwrap();
        let a: Vec<_> = g.edges().map(|(u, v, w)| (u, v, w.to_bits())).collect();
        let b: Vec<_> = back.edges().map(|(u, v, w)| (u, v, w.to_bits())).collect();
        assert_eq!(a, b);
        assert_eq!(fs::read(&path).unwrap(), back.to_bytes().unwrap());
    }
}

fn bridge_end_to_end() {
    let corpus = fixture("bridge_corpus.txt");
    let text = fs::read_to_string(&corpus).unwrap();
    let records: Vec<String> = text.lines().map(str::to_owned).collect();
    let vocab = Vocab::build(&records);
    let mut local = fit(&records, &vocab, 1.0, LogitForm::raw());
    let graph = build_graph(&records, &vocab, &mut local).unwrap();

    let mut cmd = Command::new(env!("CARGO_BIN_EXE_grad-test-server"));
    cmd.args(["toy", corpus.to_str().unwrap(), "--raw", "1"]);
    let mut remote = BridgeClient::spawn(cmd, "grad-test-server", Duration::from_secs(10)).unwrap();
    remote.expect_vocab_size(vocab.len()).unwrap();

    let prompts: Vec<String> = records
        .iter()
        .map(|r| r.split_whitespace().take(2).collect::<Vec<_>>().join(" "))
        .collect();
    assert_eq!(prompts.len(), 20);
    let config = DecoderConfig {
        max_tokens: 16,
        ..DecoderConfig::default()
    };
    let mut fused_steps = 0;
    for prompt in &prompts {
        let ids = vocab.tokenize_prompt(prompt);
        let a = generate(&mut remote, &graph, &ids, &config).unwrap();
        let b = generate(&mut local, &graph, &ids, &config).unwrap();
        assert_eq!(a.tokens, b.tokens, "prompt {prompt:?}");
        fused_steps += a.traces.iter().filter(|t| t.fused_active).count();
    }
    assert!(fused_steps > 0);
    remote.shutdown().unwrap();
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn(),
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            name: "greedy equivalence",
            budget: Duration::from_secs(10),
            run: greedy_equivalence,
        },
        Criterion {
            name: "construction oracle",
            budget: Duration::from_secs(30),
            run: construction_oracle,
        },
        Criterion {
            name: "normalization invariant",
            budget: Duration::from_secs(1),
            run: normalization,
        },
        Criterion {
            name: "planted-fact improvement",
            budget: Duration::from_secs(60),
            run: planted_fact,
        },
        Criterion {
            name: "densification",
            budget: Duration::from_secs(60),
            run: densification,
        },
        Criterion {
            name: "serialization",
            budget: Duration::from_secs(1),
            run: serialization,
        },
        Criterion {
            name: "bridge end-to-end",
            budget: Duration::from_secs(10),
            run: bridge_end_to_end,
        },
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.run));
        let elapsed = start.elapsed();
        let verdict = match outcome {
            Ok(()) if elapsed <= c.budget => "PASS",
            Ok(()) => "FAIL (over budget)",
            Err(_) => "FAIL",
        };
        if verdict != "PASS" {
            failed += 1;
        }
        println!(
            "acceptance {:<26} {verdict} {:>8.1} ms (budget {} ms)",
            c.name,
            elapsed.as_secs_f64() * 1e3,
            c.budget.as_millis()
        );
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
