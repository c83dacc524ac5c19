use std::io::{BufRead, Write};

use super::protocol::{Request, Response};
use crate::error::Result;
use crate::source::LogitSource;
use crate::vocab::validate_ids;

/// Answers bridge requests from `input` with `source` until `shutdown` or end
/// of input. Per-request failures become `error` responses; only I/O errors
/// on the streams themselves end the loop with an error.
pub fn serve<L, R, W>(source: &mut L, input: R, mut output: W) -> Result<()>
where
    L: LogitSource + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (response, stop) = match serde_json::from_str::<Request>(&line) {
            Ok(Request::Shutdown) => (Response::Shutdown, true),
            Ok(request) => (answer(source, request), false),
            Err(e) => (
                Response::Error {
                    message: format!("malformed request: {e}"),
                },
                false,
            ),
        };
        serde_json::to_writer(&mut output, &response)?;
        output.write_all(b"\n")?;
        output.flush()?;
        if stop {
            break;
        }
    }
    Ok(())
}

fn answer<L: LogitSource + ?Sized>(source: &mut L, request: Request) -> Response {
    let result = match request {
        Request::Hello => Ok(Response::Hello {
            vocab_size: source.vocab_size(),
        }),
        Request::NextLogits { tokens } => validate_ids(&tokens, source.vocab_size())
            .and_then(|_| source.next_logits(&tokens))
            .map(|logits| Response::NextLogits {
                logits: logits.into_inner(),
            }),
        Request::TransitionScores { tokens } => validate_ids(&tokens, source.vocab_size())
            .and_then(|_| source.transition_scores(&tokens))
            .map(|scores| Response::TransitionScores {
                scores: scores.into(),
            }),
        Request::Shutdown => Ok(Response::Shutdown),
    };
    result.unwrap_or_else(|e| Response::Error {
        message: e.to_string(),
    })
}
