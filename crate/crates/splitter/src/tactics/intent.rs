//! T6 — structured intent extraction. The local model parses the prompt
//! into `{intent, target, constraints}`; on success the cloud prompt is
//! rewritten as a filled template. Strict parsing accepts only a bare
//! well-formed JSON object — prose or a fenced block falls through with the
//! original prompt unchanged.

use serde_json::Value;

use crate::backends::{BackendError, ChatClient, ChatOptions};
use crate::types::{ChatRequest, Message, Role, TokenUsage};

use super::prompts::PromptAssets;

pub const INTENT_TAXONOMY: [&str; 6] =
    ["explain", "refactor", "debug", "generate", "rename", "search"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Intent {
    pub intent: String,
    pub target: String,
    pub constraints: Vec<String>,
}

/// Strict parse: the trimmed output must be a bare JSON object with a
/// string `intent`, a string `target`, and (optionally) a string-array
/// `constraints`. Anything else — prose, fences, wrong shapes — is a parse
/// failure.
pub fn parse_strict(raw: &str) -> Option<Intent> {
    let trimmed = raw.trim();
    if !trimmed.starts_with('{') || !trimmed.ends_with('}') {
        return None;
    }
    let value: Value = serde_json::from_str(trimmed).ok()?;
    let object = value.as_object()?;
    let intent = object.get("intent")?.as_str()?.to_string();
    let target = object.get("target")?.as_str()?.to_string();
    let constraints = match object.get("constraints") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                out.push(item.as_str()?.to_string());
            }
            out
        }
        Some(_) => return None,
    };
    Some(Intent { intent, target, constraints })
}

pub fn in_taxonomy(intent: &str) -> bool {
    INTENT_TAXONOMY.contains(&intent)
}

/// The filled template that replaces chatty prose.
pub fn render_template(intent: &Intent) -> String {
    let constraints = if intent.constraints.is_empty() {
        "none".to_string()
    } else {
        intent.constraints.join("; ")
    };
    format!(
        "{}: {}. Constraints: {}.",
        intent.intent.to_uppercase(),
        intent.target,
        constraints
    )
}

#[derive(Debug, Clone)]
pub struct IntentOutcome {
    /// `Some` when the prompt was rewritten; `None` is a passthrough.
    pub request: Option<ChatRequest>,
    pub extracted: Option<Intent>,
    pub local_usage: TokenUsage,
    pub local_latency_ms: u64,
}

/// Run the extractor and rewrite the active ask as a template. Parse
/// failures and out-of-taxonomy intents fall through unchanged.
pub async fn extract(
    request: &ChatRequest,
    local: &dyn ChatClient,
    assets: &PromptAssets,
) -> Result<IntentOutcome, BackendError> {
    let prompt = [
        Message::system(assets.intent.clone()),
        Message::user(request.content_text()),
    ];
    let outcome = local.chat(&prompt, &ChatOptions::deterministic()).await?;
    let parsed = parse_strict(&outcome.content);

    let rewritten = parsed.as_ref().filter(|i| in_taxonomy(&i.intent)).map(|parsed| {
        let mut result = request.clone();
        if let Some(idx) = result.messages.iter().rposition(|m| m.role == Role::User) {
            result.messages[idx].content = render_template(parsed);
        }
        result
    });

    Ok(IntentOutcome {
        request: rewritten,
        extracted: parsed,
        local_usage: outcome.usage,
        local_latency_ms: outcome.latency_ms,
    })
}
