//! T4 — local drafting with cloud review. The local model authors a full
//! draft; the outgoing cloud request becomes the original conversation plus
//! the draft plus a review instruction asking for approval-or-correction
//! with no explanation of changes.

use crate::backends::{BackendError, ChatClient, ChatOptions};
use crate::types::{ChatRequest, Message, TokenUsage};

use super::prompts::PromptAssets;

/// The fixed sentinel the reviewer replies with to approve the draft
/// unchanged. Detected by exact match on the trimmed response.
pub const APPROVAL_SENTINEL: &str = "APPROVED_UNCHANGED";

#[derive(Debug, Clone)]
pub struct DraftOutcome {
    /// The review request bound for the cloud.
    pub request: ChatRequest,
    pub draft: String,
    pub local_usage: TokenUsage,
    pub local_latency_ms: u64,
}

/// Draft locally and build the review request. Returns `None` when the
/// local model produced an empty draft (the caller fails open).
pub async fn prepare_review(
    request: &ChatRequest,
    local: &dyn ChatClient,
    assets: &PromptAssets,
) -> Result<Option<DraftOutcome>, BackendError> {
    let options = ChatOptions {
        temperature: request.temperature,
        max_output_tokens: request.max_output_tokens,
        want_logprobs: false,
        cache_prefix_len: None,
    };
    let outcome = local.chat(&request.messages, &options).await?;
    let draft = outcome.content.trim().to_string();
    if draft.is_empty() {
        return Ok(None);
    }
    let mut review = request.clone();
    review
        .messages
        .push(Message::user(format!("{}\n{draft}", assets.reviewer)));
    Ok(Some(DraftOutcome {
        request: review,
        draft,
        local_usage: outcome.usage,
        local_latency_ms: outcome.latency_ms,
    }))
}

/// Resolve the cloud's review: an exact approval is replaced by the draft.
/// Returns the final content and whether the draft was approved.
pub fn resolve_review(cloud_content: &str, draft: &str) -> (String, bool) {
    if cloud_content.trim() == APPROVAL_SENTINEL {
        (draft.to_string(), true)
    } else {
        (cloud_content.to_string(), false)
    }
}
