//! T2 — prompt compression. Static mode compresses the system prompt once
//! per content hash and caches the result; dynamic mode rewrites the chat
//! history (everything non-system except the active ask) per call. A
//! compressed segment is adopted only if strictly shorter in estimated
//! tokens.

use std::collections::HashMap;
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::backends::{BackendError, ChatClient, ChatOptions};
use crate::config::CompressMode;
use crate::tokens::count_tokens;
use crate::types::{ChatRequest, Message, Role, TokenUsage};

use super::prompts::PromptAssets;

/// Session-wide cache of static system-prompt compressions, keyed by the
/// content hash of the exact system prompt text.
#[derive(Debug, Default)]
pub struct StaticCompressionCache {
    entries: Mutex<HashMap<String, String>>,
}

impl StaticCompressionCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn get(&self, key: &str) -> Option<String> {
        self.entries.lock().expect("static cache lock").get(key).cloned()
    }

    fn insert(&self, key: String, value: String) {
        self.entries.lock().expect("static cache lock").insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("static cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct CompressOutcome {
    pub request: ChatRequest,
    /// True when at least one segment was adopted.
    pub changed: bool,
    pub local_usage: TokenUsage,
    pub local_latency_ms: u64,
}

fn content_key(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

async fn compress_text(
    local: &dyn ChatClient,
    assets: &PromptAssets,
    text: &str,
) -> Result<(String, TokenUsage, u64), BackendError> {
    let messages = [
        Message::system(assets.compressor.clone()),
        Message::user(text.to_string()),
    ];
    let outcome = local.chat(&messages, &ChatOptions::deterministic()).await?;
    Ok((outcome.content, outcome.usage, outcome.latency_ms))
}

/// Run the configured compression modes over the request.
///
/// Whole-tactic failure semantics: any backend error aborts the transform
/// and the caller fails open with the original request.
pub async fn compress(
    request: &ChatRequest,
    local: &dyn ChatClient,
    assets: &PromptAssets,
    modes: &[CompressMode],
    static_cache: &StaticCompressionCache,
) -> Result<CompressOutcome, BackendError> {
    let mut result = request.clone();
    let mut changed = false;
    let mut local_usage = TokenUsage::ZERO;
    let mut local_latency = 0u64;

    let last_user_idx = result
        .messages
        .iter()
        .rposition(|m| m.role == Role::User);

    for idx in 0..result.messages.len() {
        let message = &result.messages[idx];
        let is_system = message.role == Role::System && idx == 0;
        let mode_wanted = if is_system { CompressMode::Static } else { CompressMode::Dynamic };
        if !modes.contains(&mode_wanted) {
            continue;
        }
        // the active ask is never compressed away
        if !is_system && Some(idx) == last_user_idx {
            continue;
        }
        if message.content.trim().is_empty() {
            continue;
        }

        let original = message.content.clone();
        let candidate = if is_system {
            let key = content_key(&original);
            match static_cache.get(&key) {
                Some(cached) => cached,
                None => {
                    let (text, usage, latency) = compress_text(local, assets, &original).await?;
                    local_usage += usage;
                    local_latency += latency;
                    static_cache.insert(key, text.clone());
                    text
                }
            }
        } else {
            let (text, usage, latency) = compress_text(local, assets, &original).await?;
            local_usage += usage;
            local_latency += latency;
            text
        };

        // no-worse rule: adopt only if strictly shorter in estimated tokens
        if count_tokens(&candidate, None) < count_tokens(&original, None)
            && !candidate.trim().is_empty()
        {
            result.messages[idx].content = candidate;
            changed = true;
        }
    }

    Ok(CompressOutcome { request: result, changed, local_usage, local_latency_ms: local_latency })
}
