//! Blocking HTTP adapters: an OpenAI-style chat-completion agent and a
//! batch embedding client.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::embed::{EmbedError, Embedder, Embedding};
use crate::engine::{estimate_tokens, AgentClient, AgentResponse, BackendError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    /// Extra attempts after a transport failure or a 5xx.
    pub max_retries: u32,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "gpt-4o-mini".into(),
            temperature: 0.0,
            max_tokens: 1024,
            api_key_env: None,
            timeout_secs: 60.0,
            max_retries: 2,
        }
    }
}

fn agent(timeout_secs: f64) -> ureq::Agent {
    let timeout = (timeout_secs > 0.0).then(|| Duration::from_secs_f64(timeout_secs));
    ureq::Agent::config_builder()
        .timeout_global(timeout)
        .http_status_as_error(false)
        .build()
        .into()
}

fn map_error(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::Json(e) => BackendError::Protocol(e.to_string()),
        other => BackendError::Transport(other.to_string()),
    }
}

fn retryable(e: &BackendError) -> bool {
    !matches!(e, BackendError::Protocol(_))
}

/// POSTs `body` as JSON and decodes the reply, retrying transient failures.
fn post_json<T: serde::de::DeserializeOwned>(
    http: &ureq::Agent,
    url: &str,
    bearer: Option<&str>,
    body: &serde_json::Value,
    max_retries: u32,
) -> Result<T, BackendError> {
    let mut last = BackendError::Transport("no attempt made".into());
    for _ in 0..=max_retries {
        let mut req = http.post(url);
        if let Some(key) = bearer {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let result = req.send_json(body).map_err(map_error).and_then(|mut resp| {
            let status = resp.status().as_u16();
            if status >= 500 {
                return Err(BackendError::Transport(format!("server returned {status}")));
            }
            if status >= 400 {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                return Err(BackendError::Protocol(format!("status {status}: {}", text.trim())));
            }
            resp.body_mut().read_json::<T>().map_err(map_error)
        });
        match result {
            Ok(v) => return Ok(v),
            Err(e) if retryable(&e) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

pub struct ChatCompletionClient {
    cfg: ChatConfig,
    api_key: Option<String>,
    http: ureq::Agent,
}

impl ChatCompletionClient {
    /// Reads the credential from the configured variable, failing if it is
    /// named but unset.
    pub fn new(cfg: ChatConfig) -> Result<Self, BackendError> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| BackendError::Transport(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        Ok(Self {
            http: agent(cfg.timeout_secs),
            cfg,
            api_key,
        })
    }

    pub fn config(&self) -> &ChatConfig {
        &self.cfg
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }
}

/// Splits the assembled prompt back into a system and a user message.
fn messages(prompt: &str) -> Vec<serde_json::Value> {
    if let Some(rest) = prompt.strip_prefix("System:\n") {
        if let Some((system, user)) = rest.split_once("\n\nUser:\n") {
            return vec![
                json!({"role": "system", "content": system}),
                json!({"role": "user", "content": user}),
            ];
        }
    }
    vec![json!({"role": "user", "content": prompt})]
}

impl AgentClient for ChatCompletionClient {
    fn act(&self, prompt: &str) -> Result<AgentResponse, BackendError> {
        let body = json!({
            "model": self.cfg.model,
            "messages": messages(prompt),
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        });
        let started = Instant::now();
        let reply: ChatReply = post_json(&self.http, &self.url(), self.api_key.as_deref(), &body, self.cfg.max_retries)?;
        let latency = started.elapsed();
        let output = reply
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("reply has no choices".into()))?
            .message
            .content
            .unwrap_or_default();
        Ok(match reply.usage {
            Some(u) => AgentResponse {
                output,
                input_tokens: u.prompt_tokens,
                output_tokens: u.completion_tokens,
                latency,
                tokens_estimated: false,
            },
            None => AgentResponse {
                input_tokens: estimate_tokens(prompt),
                output_tokens: estimate_tokens(&output),
                output,
                latency,
                tokens_estimated: true,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Full endpoint URL; receives `{"texts": [...]}` and answers
    /// `{"vectors": [[...], ...]}`.
    pub url: String,
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Expected vector length; every reply is checked against it.
    pub dim: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8001/embed".into(),
            api_key_env: None,
            timeout_secs: 30.0,
            max_retries: 2,
            dim: 384,
        }
    }
}

#[derive(Deserialize)]
struct EmbedReply {
    vectors: Vec<Vec<f64>>,
}

pub struct RemoteEmbedder {
    cfg: EmbeddingConfig,
    api_key: Option<String>,
    http: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn new(cfg: EmbeddingConfig) -> Result<Self, EmbedError> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| EmbedError::Transport(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        Ok(Self {
            http: agent(cfg.timeout_secs),
            cfg,
            api_key,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let mut v = self.embed_batch(&[text])?;
        v.pop().ok_or_else(|| EmbedError::Protocol("empty reply".into()))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({ "texts": texts });
        let reply: EmbedReply = post_json(&self.http, &self.cfg.url, self.api_key.as_deref(), &body, self.cfg.max_retries)
            .map_err(|e| match e {
                BackendError::Protocol(m) => EmbedError::Protocol(m),
                other => EmbedError::Transport(other.to_string()),
            })?;
        if reply.vectors.len() != texts.len() {
            return Err(EmbedError::Protocol(format!(
                "asked for {} vectors, got {}",
                texts.len(),
                reply.vectors.len()
            )));
        }
        reply
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.cfg.dim {
                    Err(EmbedError::DimensionMismatch {
                        left: self.cfg.dim,
                        right: v.len(),
                    })
                } else {
                    Ok(Embedding::from_raw(v))
                }
            })
            .collect()
    }
}
