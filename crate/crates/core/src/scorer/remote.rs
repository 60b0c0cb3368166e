//! Client for a scorer served over HTTP.
//!
//! Wire protocol (JSON bodies, field names fixed):
//!
//! * `POST /v1/tokenize` `{"text"}` -> `{"ids", "tokens"}`
//! * `POST /v1/score_window` `{"ids", "target_len"}` -> `{"mean_nll", "target_tokens"}`
//! * `GET /v1/descriptor` -> `{"name", "vocab_size", "max_window"}`

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{check_window, ScoreError, Scorer, ScorerDescriptor, TokenSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub ids: Vec<u32>,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreWindowRequest {
    pub ids: Vec<u32>,
    pub target_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreWindowResponse {
    pub mean_nll: f64,
    pub target_tokens: usize,
}

pub type DescriptorResponse = ScorerDescriptor;

#[derive(Debug, Clone)]
pub struct RemoteScorer {
    base: String,
    agent: ureq::Agent,
    descriptor: ScorerDescriptor,
}

impl RemoteScorer {
    /// Connects and fetches the descriptor; fails if the server is unreachable.
    pub fn connect(base_url: &str) -> Result<Self, ScoreError> {
        Self::connect_with_timeout(base_url, Duration::from_secs(60))
    }

    pub fn connect_with_timeout(base_url: &str, timeout: Duration) -> Result<Self, ScoreError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let base = base_url.trim_end_matches('/').to_string();
        let descriptor: ScorerDescriptor = {
            let resp = agent
                .get(&format!("{base}/v1/descriptor"))
                .call()
                .map_err(transport)?;
            read_json(resp)?
        };
        descriptor
            .validate()
            .map_err(|e| ScoreError::Protocol(format!("remote descriptor rejected: {e}")))?;
        Ok(Self {
            base,
            agent,
            descriptor,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, ScoreError> {
        let resp = self
            .agent
            .post(&format!("{}{path}", self.base))
            .send_json(body)
            .map_err(transport)?;
        read_json(resp)
    }
}

fn transport(err: ureq::Error) -> ScoreError {
    let status = match &err {
        ureq::Error::StatusCode(code) => Some(*code),
        _ => None,
    };
    ScoreError::Transport {
        status,
        detail: err.to_string(),
    }
}

fn read_json<R: DeserializeOwned>(mut resp: ureq::http::Response<ureq::Body>) -> Result<R, ScoreError> {
    let status = resp.status().as_u16();
    if !(200..300).contains(&status) {
        let detail = resp
            .body_mut()
            .read_to_string()
            .unwrap_or_else(|e| format!("<unreadable body: {e}>"));
        return Err(ScoreError::Transport {
            status: Some(status),
            detail,
        });
    }
    resp.body_mut()
        .read_json()
        .map_err(|e| ScoreError::Protocol(e.to_string()))
}

impl Scorer for RemoteScorer {
    fn descriptor(&self) -> ScorerDescriptor {
        self.descriptor.clone()
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, ScoreError> {
        let resp: TokenizeResponse = self.post(
            "/v1/tokenize",
            &TokenizeRequest {
                text: text.to_string(),
            },
        )?;
        TokenSequence::with_surface(resp.ids, resp.tokens)
    }

    fn score_window(&self, window: &[u32], target_len: usize) -> Result<f64, ScoreError> {
        check_window(window.len(), target_len, self.descriptor.max_window)?;
        let resp: ScoreWindowResponse = self.post(
            "/v1/score_window",
            &ScoreWindowRequest {
                ids: window.to_vec(),
                target_len,
            },
        )?;
        if resp.target_tokens != target_len {
            return Err(ScoreError::Protocol(format!(
                "remote scored {} target tokens, {target_len} requested",
                resp.target_tokens
            )));
        }
        Ok(resp.mean_nll)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_field_names() {
        let body = serde_json::to_value(ScoreWindowRequest {
            ids: vec![1, 2],
            target_len: 1,
        })
        .unwrap();
        assert_eq!(body, serde_json::json!({"ids": [1, 2], "target_len": 1}));
        let resp: ScoreWindowResponse =
            serde_json::from_str(r#"{"mean_nll": 2.5, "target_tokens": 3}"#).unwrap();
        assert_eq!(resp.target_tokens, 3);
        let d: DescriptorResponse =
            serde_json::from_str(r#"{"name":"gpt2","vocab_size":50257,"max_window":1024}"#).unwrap();
        assert_eq!(d.max_window, 1024);
    }

    #[test]
    fn full_precision_floats() {
        let x = 0.1 + 0.2;
        let text = serde_json::to_string(&ScoreWindowResponse {
            mean_nll: x,
            target_tokens: 1,
        })
        .unwrap();
        let back: ScoreWindowResponse = serde_json::from_str(&text).unwrap();
        assert_eq!(back.mean_nll.to_bits(), x.to_bits());
    }

    #[test]
    fn unreachable_server_is_transport_error() {
        // port 9 (discard) on localhost is not expected to speak HTTP
        let err = RemoteScorer::connect_with_timeout("http://127.0.0.1:9", Duration::from_secs(2))
            .unwrap_err();
        assert!(err.is_backend(), "{err}");
    }
}
