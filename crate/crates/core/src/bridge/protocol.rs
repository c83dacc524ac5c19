use serde::{Deserialize, Serialize};

use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Hello,
    NextLogits { tokens: Vec<TokenId> },
    TransitionScores { tokens: Vec<TokenId> },
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Hello { vocab_size: usize },
    NextLogits { logits: Vec<f64> },
    TransitionScores { scores: Vec<f64> },
    Error { message: String },
    Shutdown,
}

impl Request {
    pub fn kind(&self) -> &'static str {
        match self {
            Request::Hello => "hello",
            Request::NextLogits { .. } => "next_logits",
            Request::TransitionScores { .. } => "transition_scores",
            Request::Shutdown => "shutdown",
        }
    }
}

impl Response {
    pub fn kind(&self) -> &'static str {
        match self {
            Response::Hello { .. } => "hello",
            Response::NextLogits { .. } => "next_logits",
            Response::TransitionScores { .. } => "transition_scores",
            Response::Error { .. } => "error",
            Response::Shutdown => "shutdown",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shapes() {
        assert_eq!(
            serde_json::to_string(&Request::Hello).unwrap(),
            r#"{"type":"hello"}"#
        );
        assert_eq!(
            serde_json::to_string(&Request::NextLogits { tokens: vec![1, 4] }).unwrap(),
            r#"{"type":"next_logits","tokens":[1,4]}"#
        );
        assert_eq!(
            serde_json::from_str::<Response>(r#"{"type":"hello","vocab_size":5}"#).unwrap(),
            Response::Hello { vocab_size: 5 }
        );
        assert_eq!(
            serde_json::from_str::<Response>(r#"{"type":"error","message":"boom"}"#).unwrap(),
            Response::Error {
                message: "boom".into()
            }
        );
    }

    #[test]
    fn floats_round_trip_exactly() {
        let logits = vec![0.1, -1.0 / 3.0, f64::MIN_POSITIVE, 1e300, -0.0, 2f64.ln()];
        let json = serde_json::to_string(&Response::NextLogits {
            logits: logits.clone(),
        })
        .unwrap();
        let Response::NextLogits { logits: back } = serde_json::from_str(&json).unwrap() else {
            panic!("wrong kind");
        };
        for (a, b) in logits.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
