//! Bridge-protocol fixture server used by the integration tests.
//!
//! ```text
//! grad-test-server toy <corpus.txt> [--k K] [--raw FLOOR]
//! grad-test-server replay <replay.json>
//! grad-test-server script <responses.txt>
//! ```
//!
//! `toy` fits the bigram model on the corpus (one record per line, vocabulary
//! built the same way the CLI builds it) and serves it. `replay` serves a
//! replay file. `script` ignores request contents and answers the n-th request
//! with the n-th line of the file verbatim, which is how malformed responses
//! are produced.

use std::fs;
use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use grad_core::bridge::serve;
use grad_core::source::{LogitForm, ReplaySource, ToyBigramModel};
use grad_core::{GradError, LogitSource, TokenSequence, Vocab};

fn main() -> ExitCode {
    match run(std::env::args().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("grad-test-server: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: Vec<String>) -> Result<(), GradError> {
    let usage =
        || GradError::Parameter("usage: grad-test-server toy|replay|script <file> [...]".into());
    let mode = args.first().ok_or_else(usage)?.as_str();
    let path = args.get(1).ok_or_else(usage)?;
    let stdin = io::stdin().lock();
    let stdout = io::stdout().lock();
    match mode {
        "toy" => {
            let mut k = ToyBigramModel::DEFAULT_SMOOTHING;
            let mut form = LogitForm::LogProb;
            let mut rest = args[2..].iter();
            while let Some(flag) = rest.next() {
                let value: f64 = rest
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| GradError::Parameter(format!("{flag} needs a number")))?;
                match flag.as_str() {
                    "--k" => k = value,
                    "--raw" => form = LogitForm::Raw { floor: value },
                    other => return Err(GradError::Parameter(format!("unknown flag {other}"))),
                }
            }
            let text = fs::read_to_string(path)?;
            let records: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            let vocab = Vocab::build(&records);
            let corpus: Vec<TokenSequence> = records.iter().map(|r| vocab.tokenize(r)).collect();
            let mut model = ToyBigramModel::fit(&corpus, vocab.len(), k)?.with_form(form);
            serve(&mut model as &mut dyn LogitSource, stdin, stdout)
        }
        "replay" => {
            let mut source = ReplaySource::load(path)?;
            serve(&mut source, stdin, stdout)
        }
        "script" => {
            let script = fs::read_to_string(path)?;
            let mut replies = script.lines();
            let mut out = stdout;
            for line in stdin.lines() {
                let line = line?;
                if line.contains("\"shutdown\"") {
                    break;
                }
                match replies.next() {
                    Some(reply) => {
                        out.write_all(reply.as_bytes())?;
                        out.write_all(b"\n")?;
                        out.flush()?;
                    }
                    None => break,
                }
            }
            Ok(())
        }
        _ => Err(usage()),
    }
}
