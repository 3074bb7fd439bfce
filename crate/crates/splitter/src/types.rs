//! Domain types shared by every module: messages, requests, responses, and
//! token usage accounting.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::StageEvent;
use crate::tokens::count_tokens;

/// Who authored a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

/// One chat message. Content is always present (possibly empty) for
/// system/user/assistant roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into(), name: None }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into(), name: None }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into(), name: None }
    }
}

/// Validation failures for an incoming [`ChatRequest`].
#[derive(Debug, Error)]
pub enum RequestError {
    #[error("request has no messages")]
    EmptyMessages,
    #[error("system messages are only allowed as the single leading message (found one at index {0})")]
    MisplacedSystemMessage(usize),
    #[error("workspace_id must be non-empty")]
    EmptyWorkspace,
}

/// The canonical in-pipeline request envelope.
///
/// Stages transform this value; it is never mutated in place across stage
/// boundaries so fail-open can always fall back to the pre-stage request.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    /// Namespace for the semantic cache. Defaults to `"default"`.
    pub workspace_id: String,
    /// Explicit do-not-cache flag for sensitive prompts.
    pub no_cache: bool,
    pub temperature: Option<f64>,
    pub max_output_tokens: Option<u32>,
    pub client_request_id: String,
    pub arrival_time: Instant,
    /// Number of leading messages forming a vendor-cacheable stable prefix.
    /// Set by the prefix-tagging stage; consumed by the cloud client.
    pub cache_prefix_len: Option<usize>,
}

impl ChatRequest {
    pub fn new(messages: Vec<Message>, workspace_id: impl Into<String>) -> Self {
        let workspace = workspace_id.into();
        Self {
            messages,
            workspace_id: if workspace.is_empty() { "default".to_string() } else { workspace },
            no_cache: false,
            temperature: None,
            max_output_tokens: None,
            client_request_id: uuid::Uuid::new_v4().to_string(),
            arrival_time: Instant::now(),
            cache_prefix_len: None,
        }
    }

    pub fn validate(&self) -> Result<(), RequestError> {
        if self.messages.is_empty() {
            return Err(RequestError::EmptyMessages);
        }
        for (idx, message) in self.messages.iter().enumerate() {
            if message.role == Role::System && idx > 0 {
                return Err(RequestError::MisplacedSystemMessage(idx));
            }
        }
        if self.workspace_id.is_empty() {
            return Err(RequestError::EmptyWorkspace);
        }
        Ok(())
    }

    /// The leading system message content, when present.
    pub fn system_prompt(&self) -> Option<&str> {
        self.messages
            .first()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }

    pub fn last_user_message(&self) -> Option<&Message> {
        self.messages.iter().rev().find(|m| m.role == Role::User)
    }

    /// All message contents joined with newlines. This is the text mocks
    /// pattern-match against and the basis for pre-call token estimates.
    pub fn content_text(&self) -> String {
        let mut out = String::new();
        for message in &self.messages {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&message.content);
        }
        out
    }

    /// Deterministic pre-call token estimate for the whole request.
    pub fn estimated_tokens(&self) -> u64 {
        self.messages
            .iter()
            .map(|m| count_tokens(&m.content, None))
            .sum()
    }

    /// True when there is nothing left to send: no messages, or only
    /// whitespace content. Stages producing such a request are treated as
    /// failed-open.
    pub fn is_effectively_empty(&self) -> bool {
        self.messages.is_empty() || self.messages.iter().all(|m| m.content.trim().is_empty())
    }
}

/// Input/output token counts as reported by a backend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self { input_tokens, output_tokens }
    }

    pub const ZERO: TokenUsage = TokenUsage { input_tokens: 0, output_tokens: 0 };

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;
    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
        }
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        self.input_tokens += rhs.input_tokens;
        self.output_tokens += rhs.output_tokens;
    }
}

/// Where a response ultimately came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseSource {
    Local,
    Cloud,
    Cache,
}

impl ResponseSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            ResponseSource::Local => "local",
            ResponseSource::Cloud => "cloud",
            ResponseSource::Cache => "cache",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

/// The final answer for one request.
///
/// `usage` is the cloud-attributed usage for this response: zero whenever the
/// answer came from the local model or the cache.
#[derive(Debug, Clone)]
pub struct ChatResponse {
    pub content: String,
    pub usage: TokenUsage,
    pub source: ResponseSource,
    pub stage_trace: Vec<StageEvent>,
    pub finish_reason: FinishReason,
}
