use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{Request, Response};
use crate::error::{GradError, Result};
use crate::source::{LogitSource, LogitVector, TransitionScores};
use crate::vocab::TokenId;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

const SNIPPET_LEN: usize = 120;

/// A logit source backed by an external server process.
pub struct BridgeClient {
    name: String,
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    vocab_size: usize,
    timeout: Duration,
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient")
            .field("name", &self.name)
            .field("vocab_size", &self.vocab_size)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

impl BridgeClient {
    /// Runs `command_line` through `sh -c` and performs the handshake.
    pub fn spawn_shell(command_line: &str, timeout: Duration) -> Result<Self> {
        let mut command = Command::new("sh");
        command.arg("-c").arg(command_line);
        Self::spawn(command, command_line, timeout)
    }

    pub fn spawn(mut command: Command, name: &str, timeout: Duration) -> Result<Self> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| GradError::Bridge(format!("failed to start `{name}`: {e}")))?;
        let stdin: ChildStdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let mut client = Self::connect(Box::new(stdin), stdout, name, timeout);
        client.child = Some(child);
        match client.handshake() {
            Ok(_) => Ok(client),
            Err(e) => {
                client.kill();
                Err(e)
            }
        }
    }

    /// Wraps already-connected streams. No handshake is performed.
    pub fn connect<R>(
        writer: Box<dyn Write + Send>,
        reader: R,
        name: &str,
        timeout: Duration,
    ) -> Self
    where
        R: Read + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::Builder::new()
            .name("bridge-reader".into())
            .spawn(move || {
                let mut reader = BufReader::new(reader);
                loop {
                    let mut line = String::new();
                    match reader.read_line(&mut line) {
                        Ok(0) => break,
                        Ok(_) => {
                            if tx.send(Ok(line)).is_err() {
                                break;
                            }
                        }
                        Err(e) => {
                            let _ = tx.send(Err(e));
                            break;
                        }
                    }
                }
            })
            .expect("spawn bridge reader thread");
        BridgeClient {
            name: name.to_owned(),
            writer,
            lines: rx,
            child: None,
            vocab_size: 0,
            timeout,
        }
    }

    /// Sends `hello` and caches the declared vocabulary size.
    pub fn handshake(&mut self) -> Result<usize> {
        match self.request(&Request::Hello)? {
            Response::Hello { vocab_size } => {
                self.vocab_size = vocab_size;
                log::info!("bridge `{}` ready, vocab_size={vocab_size}", self.name);
                Ok(vocab_size)
            }
            other => Err(unexpected("hello", &other)),
        }
    }

    /// Fails unless the handshake declared exactly `expected` tokens.
    pub fn expect_vocab_size(&self, expected: usize) -> Result<()> {
        if self.vocab_size == expected {
            Ok(())
        } else {
            Err(GradError::IncompatibleArtifacts(format!(
                "bridge `{}` declares vocab_size {} but local artifacts have {expected}",
                self.name, self.vocab_size
            )))
        }
    }

    pub fn request(&mut self, request: &Request) -> Result<Response> {
        let mut line = serde_json::to_vec(request)?;
        line.push(b'\n');
        self.writer
            .write_all(&line)
            .and_then(|_| self.writer.flush())
            .map_err(|e| GradError::Bridge(format!("failed to send {}: {e}", request.kind())))?;
        let reply = self.read_line()?;
        let response: Response = serde_json::from_str(reply.trim_end()).map_err(|e| {
            GradError::Protocol(format!(
                "expected a JSON response to {}, got {:?} ({e})",
                request.kind(),
                snippet(&reply)
            ))
        })?;
        if let Response::Error { message } = &response {
            return Err(GradError::Bridge(format!(
                "server rejected {}: {message}",
                request.kind()
            )));
        }
        Ok(response)
    }

    fn read_line(&mut self) -> Result<String> {
        let deadline = Instant::now() + self.timeout;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(remaining) {
                Ok(Ok(line)) if line.trim().is_empty() => continue,
                Ok(Ok(line)) => return Ok(line),
                Ok(Err(e)) => return Err(GradError::Bridge(format!("read failed: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(GradError::BridgeTimeout(self.timeout))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    let status = self
                        .child
                        .as_mut()
                        .and_then(|c| c.try_wait().ok().flatten())
                        .map(|s| format!(" ({s})"))
                        .unwrap_or_default();
                    return Err(GradError::Bridge(format!(
                        "server `{}` closed its output{status}",
                        self.name
                    )));
                }
            }
        }
    }

    /// Asks the server to exit and reaps the child.
    pub fn shutdown(mut self) -> Result<()> {
        self.close();
        Ok(())
    }

    fn close(&mut self) {
        let _ = self
            .writer
            .write_all(b"{\"type\":\"shutdown\"}\n")
            .and_then(|_| self.writer.flush());
        if let Some(mut child) = self.child.take() {
            let deadline = Instant::now() + Duration::from_secs(2);
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => {
                        thread::sleep(Duration::from_millis(5))
                    }
                    _ => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break;
                    }
                }
            }
        }
    }

    fn kill(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        self.close();
    }
}

impl LogitSource for BridgeClient {
    fn name(&self) -> &str {
        "bridge"
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logits(&mut self, prefix: &[TokenId]) -> Result<LogitVector> {
        if prefix.is_empty() {
            return Err(GradError::EmptyPrefix);
        }
        let response = self.request(&Request::NextLogits {
            tokens: prefix.to_vec(),
        })?;
        let Response::NextLogits { logits } = response else {
            return Err(unexpected("next_logits", &response));
        };
        if logits.len() != self.vocab_size {
            return Err(GradError::Protocol(format!(
                "next_logits returned {} values, handshake declared {}",
                logits.len(),
                self.vocab_size
            )));
        }
        LogitVector::new(logits)
    }

    fn transition_scores(&mut self, seq: &[TokenId]) -> Result<TransitionScores> {
        if seq.len() < 2 {
            return Err(GradError::SequenceTooShort { len: seq.len() });
        }
        let response = self.request(&Request::TransitionScores {
            tokens: seq.to_vec(),
        })?;
        let Response::TransitionScores { scores } = response else {
            return Err(unexpected("transition_scores", &response));
        };
        if scores.len() != seq.len() - 1 {
            return Err(GradError::Protocol(format!(
                "transition_scores returned {} values for {} tokens",
                scores.len(),
                seq.len()
            )));
        }
        TransitionScores::new(scores)
    }
}

fn unexpected(expected: &str, got: &Response) -> GradError {
    GradError::Protocol(format!(
        "expected a {expected} response, got {}",
        got.kind()
    ))
}

fn snippet(line: &str) -> String {
    let line = line.trim_end();
    match line.char_indices().nth(SNIPPET_LEN) {
        Some((cut, _)) => format!("{}...", &line[..cut]),
        None => line.to_owned(),
    }
}
