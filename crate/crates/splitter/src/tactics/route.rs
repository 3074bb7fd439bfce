//! T1 — local routing. A small local model classifies each request as
//! trivial or complex; trivial requests are answered locally and never
//! reach the cloud.

use crate::backends::{BackendError, ChatClient, ChatOptions, ChatOutcome};
use crate::types::{ChatRequest, Message};

use super::prompts::PromptAssets;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteLabel {
    Trivial,
    Complex,
}

#[derive(Debug, Clone)]
pub struct RouteDecision {
    pub label: RouteLabel,
    /// `exp(logprob)` of the label token when the backend exposes logprobs.
    pub confidence: Option<f64>,
    pub raw_output: String,
}

#[derive(Debug, Clone)]
pub struct ClassifyResult {
    pub decision: RouteDecision,
    pub local_usage: crate::types::TokenUsage,
    pub latency_ms: u64,
}

/// Map the classifier's first output token onto a label. Unparseable
/// output defaults to complex.
pub fn parse_label(raw: &str) -> RouteLabel {
    let first_token: String = raw
        .split_whitespace()
        .next()
        .unwrap_or("")
        .chars()
        .filter(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_uppercase();
    if first_token == "TRIVIAL" {
        RouteLabel::Trivial
    } else {
        RouteLabel::Complex
    }
}

/// Apply the confidence margin: a trivial label below the threshold is
/// escalated to complex. Without logprobs the label alone decides.
pub fn finalize_label(label: RouteLabel, confidence: Option<f64>, threshold: f64) -> RouteLabel {
    match (label, confidence) {
        (RouteLabel::Trivial, Some(c)) if c < threshold => RouteLabel::Complex,
        (label, _) => label,
    }
}

/// Run the few-shot classifier at temperature 0 with a 3-token output
/// budget and fold the confidence margin into the final label.
pub async fn classify(
    request: &ChatRequest,
    local: &dyn ChatClient,
    assets: &PromptAssets,
    threshold: f64,
) -> Result<ClassifyResult, BackendError> {
    let messages = [
        Message::system(assets.classifier.clone()),
        Message::user(request.content_text()),
    ];
    let options = ChatOptions {
        temperature: Some(0.0),
        max_output_tokens: Some(3),
        want_logprobs: true,
        cache_prefix_len: None,
    };
    let outcome = local.chat(&messages, &options).await?;
    let confidence = outcome.logprob_of_first_token.map(f64::exp);
    let label = finalize_label(parse_label(&outcome.content), confidence, threshold);
    Ok(ClassifyResult {
        decision: RouteDecision { label, confidence, raw_output: outcome.content },
        local_usage: outcome.usage,
        latency_ms: outcome.latency_ms,
    })
}

/// Answer a trivial request with the local model directly.
pub async fn answer_locally(
    request: &ChatRequest,
    local: &dyn ChatClient,
) -> Result<ChatOutcome, BackendError> {
    let options = ChatOptions {
        temperature: request.temperature,
        max_output_tokens: request.max_output_tokens,
        want_logprobs: false,
        cache_prefix_len: None,
    };
    local.chat(&request.messages, &options).await
}
