//! Chat and embedding clients over plain HTTP for the local runtime and the
//! cloud endpoint, plus a scripted deterministic mock for tests and
//! evaluation. No vendor SDKs; raw HTTP only.

mod http;
mod mock;

pub use http::HttpChatClient;
pub use mock::{
    Pattern, ScriptedBackend, ScriptedBehavior, ScriptedReply, ScriptedRule, ScriptedUsage,
};

use std::sync::Arc;

use async_trait::async_trait;
use thiserror::Error;

use crate::config::{BackendConfig, BackendKind, BackendsConfig};
use crate::types::{FinishReason, Message, TokenUsage};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unreachable at {url}: {detail}")]
    Unreachable { url: String, detail: String },
    #[error("protocol error from backend: {0}")]
    Protocol(String),
    #[error("backend reported no token usage")]
    MissingUsage,
    #[error("backend returned HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

impl BackendError {
    /// Transport-level failures that warrant the single retry.
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Unreachable { .. })
    }
}

/// Where a backend lives and what it can do.
#[derive(Debug, Clone)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub base_url: String,
    pub model_name: String,
    pub auth_token: Option<String>,
    pub supports_prompt_cache: bool,
    pub supports_logprobs: bool,
}

impl BackendDescriptor {
    pub fn from_config(config: &BackendConfig) -> Self {
        Self {
            kind: config.kind,
            base_url: config.base_url.trim_end_matches('/').to_string(),
            model_name: config.model.clone(),
            auth_token: config.auth_token.clone(),
            supports_prompt_cache: config.supports_prompt_cache,
            supports_logprobs: config.supports_logprobs,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ChatOptions {
    pub temperature: Option<f64>,
    pub max_output_tokens: Option<u32>,
    pub want_logprobs: bool,
    /// Number of leading messages to mark as a vendor-cacheable prefix.
    /// Only honored by backends with prompt-cache support.
    pub cache_prefix_len: Option<usize>,
}

impl ChatOptions {
    pub fn deterministic() -> Self {
        Self { temperature: Some(0.0), ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct ChatOutcome {
    pub content: String,
    /// Wire-reported usage; never synthesized for non-mock backends.
    pub usage: TokenUsage,
    pub logprob_of_first_token: Option<f64>,
    pub finish_reason: FinishReason,
    /// Wall time of the call for real backends; the scripted delay for mocks.
    pub latency_ms: u64,
}

#[derive(Debug, Clone)]
pub struct EmbedOutcome {
    pub vector: Vec<f32>,
    pub latency_ms: u64,
}

/// Uniform chat + embedding interface over the local runtime, the cloud
/// endpoint, and the scripted mock.
#[async_trait]
pub trait ChatClient: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    async fn chat(
        &self,
        messages: &[Message],
        options: &ChatOptions,
    ) -> Result<ChatOutcome, BackendError>;

    async fn embed(&self, text: &str) -> Result<EmbedOutcome, BackendError>;
}

/// Build a client for one configured backend.
pub fn build_client(config: &BackendConfig) -> Arc<dyn ChatClient> {
    match config.kind {
        BackendKind::ScriptedMock => Arc::new(
            ScriptedBackend::always(
                config.mock.response.clone(),
                TokenUsage::new(config.mock.input_tokens, config.mock.output_tokens),
            )
            .with_model_name(&config.model),
        ),
        _ => Arc::new(HttpChatClient::new(config)),
    }
}

/// The three clients the pipeline needs.
pub struct BackendSet {
    pub local: Arc<dyn ChatClient>,
    pub cloud: Arc<dyn ChatClient>,
    pub embedding: Arc<dyn ChatClient>,
}

impl BackendSet {
    pub fn from_config(config: &BackendsConfig) -> Self {
        Self {
            local: build_client(&config.local),
            cloud: build_client(&config.cloud),
            embedding: build_client(&config.embedding),
        }
    }
}

/// Concatenated message contents; the text scripted-mock rules match on and
/// the basis of request-level token estimates.
pub fn render_messages(messages: &[Message]) -> String {
    let mut out = String::new();
    for message in messages {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&message.content);
    }
    out
}
