//! HTTP backend speaking the chat-completions wire shape.
//!
//! Chat requests POST to `{base_url}/v1/chat/completions`, embeddings to
//! `{base_url}/v1/embeddings`, both as JSON with a bearer token read from an
//! environment variable named in the config. Greedy decoding is requested as
//! `temperature: 0`; the repetition penalty travels in a `repetition_penalty`
//! extension field when the endpoint is declared to support it, and is
//! otherwise omitted with a logged warning.

use super::{ChatBackend, ChatReply, ChatRequest, TokenUsage};
use crate::error::{Error, Result};
use serde::Deserialize;
use serde_json::json;
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub supports_repetition_penalty: bool,
    pub timeout: Duration,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://localhost:8080".into(),
            model: "default".into(),
            api_key_env: "EMOSYNTH_API_KEY".into(),
            supports_repetition_penalty: true,
            timeout: Duration::from_secs(120),
        }
    }
}

impl EndpointConfig {
    fn api_key(&self) -> Result<String> {
        std::env::var(&self.api_key_env).map_err(|_| {
            Error::invalid(format!(
                "bearer token environment variable {} is not set",
                self.api_key_env
            ))
        })
    }
}

pub struct HttpChat {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
}

impl HttpChat {
    pub fn new(config: EndpointConfig) -> Result<HttpChat> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::invalid(format!("http client failed to build: {e}")))?;
        Ok(HttpChat { config, client })
    }
}

#[derive(Deserialize)]
struct ChatCompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

#[derive(Deserialize)]
struct UsageBody {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

/// Classify an HTTP response status: server-side and throttling statuses are
/// transport-class (retryable), other non-success statuses are protocol
/// errors (retrying a 401 will not help).
fn status_error(status: reqwest::StatusCode, body: String) -> Error {
    if status.is_server_error() || status.as_u16() == 429 {
        Error::Gateway { attempts: 1, detail: format!("endpoint returned {status}") }
    } else {
        Error::protocol(format!("endpoint returned {status}"), body)
    }
}

impl ChatBackend for HttpChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply> {
        let key = self.config.api_key()?;
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": 0.0,
            "max_tokens": request.params.max_new_tokens,
        });
        if self.config.supports_repetition_penalty {
            body["repetition_penalty"] = json!(request.params.repetition_penalty);
        } else {
            log::warn!(
                "endpoint {} does not support repetition_penalty; omitting it",
                self.config.base_url
            );
        }
        let url = format!("{}/v1/chat/completions", self.config.base_url.trim_end_matches('/'));
        let response = self
            .client
            .post(&url)
            .bearer_auth(key)
            .json(&body)
            .send()
            .map_err(|e| Error::Gateway { attempts: 1, detail: e.to_string() })?;
        let status = response.status();
        let text =
            response.text().map_err(|e| Error::Gateway { attempts: 1, detail: e.to_string() })?;
        if !status.is_success() {
            return Err(status_error(status, text));
        }
        let parsed: ChatCompletionBody = serde_json::from_str(&text).map_err(|e| {
            Error::protocol(format!("chat completion body did not parse: {e}"), &text)
        })?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| Error::protocol("chat completion body has no choices", &text))?;
        let usage = parsed
            .usage
            .map(|u| TokenUsage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            })
            .unwrap_or_default();
        Ok(ChatReply {
            text: choice.message.content,
            usage,
            // overwritten by the gateway with the end-to-end figure
            latency: Duration::ZERO,
        })
    }
}

/// Embeddings over the same wire shape; see [`super::embed::Embedder`].
pub struct HttpEmbedder {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(config: EndpointConfig) -> Result<HttpEmbedder> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::invalid(format!("http client failed to build: {e}")))?;
        Ok(HttpEmbedder { config, client })
    }
}

#[derive(Deserialize)]
struct EmbeddingsBody {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    embedding: Vec<f64>,
}

impl super::embed::Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::invalid("embedding input texts must be non-empty"));
        }
        let key = self.config.api_key()?;
        let url = format!("{}/v1/embeddings", self.config.base_url.trim_end_matches('/'));
        let response = self
            .client
            .post(&url)
            .bearer_auth(key)
            .json(&json!({"model": self.config.model, "input": texts}))
            .send()
            .map_err(|e| Error::Gateway { attempts: 1, detail: e.to_string() })?;
        let status = response.status();
        let text =
            response.text().map_err(|e| Error::Gateway { attempts: 1, detail: e.to_string() })?;
        if !status.is_success() {
            return Err(status_error(status, text));
        }
        let parsed: EmbeddingsBody = serde_json::from_str(&text)
            .map_err(|e| Error::protocol(format!("embeddings body did not parse: {e}"), &text))?;
        if parsed.data.len() != texts.len() {
            return Err(Error::protocol(
                format!("expected {} embeddings, endpoint sent {}", texts.len(), parsed.data.len()),
                &text,
            ));
        }
        let mut vectors = Vec::with_capacity(parsed.data.len());
        let mut dim = None;
        for row in parsed.data {
            match dim {
                None => dim = Some(row.embedding.len()),
                Some(d) if d != row.embedding.len() => {
                    return Err(Error::protocol(
                        format!("embedding dimensions disagree: {d} vs {}", row.embedding.len()),
                        &text,
                    ));
                }
                _ => {}
            }
            let mut vector = row.embedding;
            super::embed::normalize(&mut vector)?;
            vectors.push(vector);
        }
        Ok(vectors)
    }
}
