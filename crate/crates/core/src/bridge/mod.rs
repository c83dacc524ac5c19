//! JSON-lines bridge to an external logit server.
//!
//! The client spawns the server as a child process and talks to it over its
//! standard streams: one JSON object per line, strictly one response per
//! request, one request in flight. Every message carries a `type` tag.
//!
//! Requests:
//!
//! ```text
//! {"type":"hello"}
//! {"type":"next_logits","tokens":[1,5,9]}
//! {"type":"transition_scores","tokens":[1,5,9,2]}
//! {"type":"shutdown"}
//! ```
//!
//! Responses:
//!
//! ```text
//! {"type":"hello","vocab_size":32000}
//! {"type":"next_logits","logits":[...vocab_size floats...]}
//! {"type":"transition_scores","scores":[...len(tokens)-1 floats...]}
//! {"type":"error","message":"..."}
//! ```
//!
//! A server may acknowledge `shutdown` with `{"type":"shutdown"}` before it
//! exits; the client does not wait for the acknowledgement.

mod client;
mod protocol;
mod server;

pub use client::{BridgeClient, DEFAULT_TIMEOUT};
pub use protocol::{Request, Response};
pub use server::serve;
