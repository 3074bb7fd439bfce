//! Raw-HTTP clients for the two non-mock backend kinds: the local inference
//! runtime's native routes and any OpenAI-compatible endpoint.

use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde_json::{json, Value};

use crate::config::{BackendConfig, BackendKind};
use crate::types::{FinishReason, Message, TokenUsage};

use super::{BackendDescriptor, BackendError, ChatClient, ChatOptions, ChatOutcome, EmbedOutcome};

pub struct HttpChatClient {
    descriptor: BackendDescriptor,
    http: reqwest::Client,
    chat_path: String,
    embeddings_path: String,
    retry_backoff: Duration,
}

impl HttpChatClient {
    pub fn new(config: &BackendConfig) -> Self {
        let descriptor = BackendDescriptor::from_config(config);
        let (chat_path, embeddings_path) = match descriptor.kind {
            BackendKind::LocalRuntime => ("/api/chat", "/api/embeddings"),
            _ => ("/v1/chat/completions", "/v1/embeddings"),
        };
        Self {
            descriptor,
            http: reqwest::Client::new(),
            chat_path: config.chat_path.clone().unwrap_or_else(|| chat_path.to_string()),
            embeddings_path: config
                .embeddings_path
                .clone()
                .unwrap_or_else(|| embeddings_path.to_string()),
            retry_backoff: Duration::from_millis(200),
        }
    }

    #[cfg(test)]
    pub fn with_retry_backoff(mut self, backoff: Duration) -> Self {
        self.retry_backoff = backoff;
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.descriptor.base_url, path)
    }

    /// POST with one retry (exponential backoff) on transient transport
    /// failure, then surface backend-unreachable.
    async fn post_json(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = self.url(path);
        let mut backoff = self.retry_backoff;
        for attempt in 0..2 {
            let mut request = self.http.post(&url).json(body);
            if let Some(token) = &self.descriptor.auth_token {
                request = request.bearer_auth(token);
            }
            match request.send().await {
                Ok(response) => {
                    let status = response.status();
                    let text = response
                        .text()
                        .await
                        .map_err(|e| BackendError::Protocol(e.to_string()))?;
                    if !status.is_success() {
                        return Err(BackendError::HttpStatus {
                            status: status.as_u16(),
                            body: text.chars().take(512).collect(),
                        });
                    }
                    return serde_json::from_str(&text)
                        .map_err(|e| BackendError::Protocol(format!("malformed body: {e}")));
                }
                Err(e) if attempt == 0 && (e.is_connect() || e.is_timeout() || e.is_request()) => {
                    tokio::time::sleep(backoff).await;
                    backoff *= 2;
                }
                Err(e) => {
                    return Err(BackendError::Unreachable { url: url.clone(), detail: e.to_string() })
                }
            }
        }
        Err(BackendError::Unreachable { url, detail: "retries exhausted".to_string() })
    }

    fn chat_body(&self, messages: &[Message], options: &ChatOptions) -> Value {
        let want_logprobs = options.want_logprobs && self.descriptor.supports_logprobs;
        match self.descriptor.kind {
            BackendKind::LocalRuntime => {
                let mut opts = serde_json::Map::new();
                if let Some(t) = options.temperature {
                    opts.insert("temperature".to_string(), json!(t));
                }
                if let Some(n) = options.max_output_tokens {
                    opts.insert("num_predict".to_string(), json!(n));
                }
                json!({
                    "model": self.descriptor.model_name,
                    "messages": wire_messages(messages, None),
                    "stream": false,
                    "options": Value::Object(opts),
                })
            }
            _ => {
                let prefix_len = options
                    .cache_prefix_len
                    .filter(|_| self.descriptor.supports_prompt_cache);
                let mut body = json!({
                    "model": self.descriptor.model_name,
                    "messages": wire_messages(messages, prefix_len),
                    "stream": false,
                });
                let map = body.as_object_mut().expect("object literal");
                if let Some(t) = options.temperature {
                    map.insert("temperature".to_string(), json!(t));
                }
                if let Some(n) = options.max_output_tokens {
                    map.insert("max_tokens".to_string(), json!(n));
                }
                if want_logprobs {
                    map.insert("logprobs".to_string(), json!(true));
                }
                body
            }
        }
    }

    fn parse_chat(&self, body: &Value, want_logprobs: bool) -> Result<ChatOutcome, BackendError> {
        match self.descriptor.kind {
            BackendKind::LocalRuntime => {
                let content = body
                    .pointer("/message/content")
                    .and_then(Value::as_str)
                    .ok_or_else(|| BackendError::Protocol("missing message.content".into()))?
                    .to_string();
                let input = body.get("prompt_eval_count").and_then(Value::as_u64);
                let output = body.get("eval_count").and_then(Value::as_u64);
                let (input, output) = match (input, output) {
                    (Some(i), Some(o)) => (i, o),
                    _ => return Err(BackendError::MissingUsage),
                };
                let finish = match body.get("done_reason").and_then(Value::as_str) {
                    Some("length") => FinishReason::Length,
                    _ => FinishReason::Stop,
                };
                Ok(ChatOutcome {
                    content,
                    usage: TokenUsage::new(input, output),
                    logprob_of_first_token: None,
                    finish_reason: finish,
                    latency_ms: 0,
                })
            }
            _ => {
                let choice = body
                    .pointer("/choices/0")
                    .ok_or_else(|| BackendError::Protocol("missing choices[0]".into()))?;
                let content = choice
                    .pointer("/message/content")
                    .and_then(Value::as_str)
                    .ok_or_else(|| BackendError::Protocol("missing message.content".into()))?
                    .to_string();
                let input = body.pointer("/usage/prompt_tokens").and_then(Value::as_u64);
                let output = body.pointer("/usage/completion_tokens").and_then(Value::as_u64);
                let (input, output) = match (input, output) {
                    (Some(i), Some(o)) => (i, o),
                    _ => return Err(BackendError::MissingUsage),
                };
                let logprob = if want_logprobs && self.descriptor.supports_logprobs {
                    choice
                        .pointer("/logprobs/content/0/logprob")
                        .and_then(Value::as_f64)
                } else {
                    None
                };
                let finish = match choice.get("finish_reason").and_then(Value::as_str) {
                    Some("length") => FinishReason::Length,
                    _ => FinishReason::Stop,
                };
                Ok(ChatOutcome {
                    content,
                    usage: TokenUsage::new(input, output),
                    logprob_of_first_token: logprob,
                    finish_reason: finish,
                    latency_ms: 0,
                })
            }
        }
    }
}

/// Messages in wire form. When `prefix_len` is set, the last prefix message
/// carries a cache-eligibility annotation.
fn wire_messages(messages: &[Message], prefix_len: Option<usize>) -> Value {
    let boundary = prefix_len.unwrap_or(0);
    Value::Array(
        messages
            .iter()
            .enumerate()
            .map(|(idx, m)| {
                let mut obj = serde_json::Map::new();
                obj.insert("role".to_string(), json!(m.role.as_str()));
                obj.insert("content".to_string(), json!(m.content));
                if let Some(name) = &m.name {
                    obj.insert("name".to_string(), json!(name));
                }
                if boundary > 0 && idx + 1 == boundary {
                    obj.insert("cache_control".to_string(), json!({"type": "ephemeral"}));
                }
                Value::Object(obj)
            })
            .collect(),
    )
}

#[async_trait]
impl ChatClient for HttpChatClient {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    async fn chat(
        &self,
        messages: &[Message],
        options: &ChatOptions,
    ) -> Result<ChatOutcome, BackendError> {
        let started = Instant::now();
        let body = self.chat_body(messages, options);
        let response = self.post_json(&self.chat_path, &body).await?;
        let mut outcome = self.parse_chat(&response, options.want_logprobs)?;
        outcome.latency_ms = started.elapsed().as_millis() as u64;
        Ok(outcome)
    }

    async fn embed(&self, text: &str) -> Result<EmbedOutcome, BackendError> {
        if text.is_empty() {
            return Err(BackendError::Unsupported("cannot embed empty text".into()));
        }
        let started = Instant::now();
        let (body, pointer) = match self.descriptor.kind {
            BackendKind::LocalRuntime => (
                json!({"model": self.descriptor.model_name, "prompt": text}),
                "/embedding",
            ),
            _ => (
                json!({"model": self.descriptor.model_name, "input": text}),
                "/data/0/embedding",
            ),
        };
        let response = self.post_json(&self.embeddings_path, &body).await?;
        let vector = response
            .pointer(pointer)
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Protocol("missing embedding vector".into()))?
            .iter()
            .map(|v| v.as_f64().unwrap_or(0.0) as f32)
            .collect();
        Ok(EmbedOutcome { vector, latency_ms: started.elapsed().as_millis() as u64 })
    }
}
