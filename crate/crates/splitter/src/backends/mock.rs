//! Scripted deterministic backend: the test oracle for everything that
//! would otherwise need a live model. Chat is a pure function of
//! (rules, request); embeddings are hash-seeded pseudo-vectors.

use std::sync::atomic::{AtomicU64, Ordering};

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::BackendKind;
use crate::tokens::count_tokens;
use crate::types::{FinishReason, Message, TokenUsage};

use super::{
    render_messages, BackendDescriptor, BackendError, ChatClient, ChatOptions, ChatOutcome,
    EmbedOutcome,
};

/// Match rule over the request text (all message contents joined).
#[derive(Debug, Clone)]
pub enum Pattern {
    Any,
    Contains(String),
    ContainsAll(Vec<String>),
}

impl Pattern {
    pub fn matches(&self, text: &str) -> bool {
        match self {
            Pattern::Any => true,
            Pattern::Contains(needle) => text.contains(needle),
            Pattern::ContainsAll(needles) => needles.iter().all(|n| text.contains(n)),
        }
    }
}

/// How the canned usage for a reply is produced.
#[derive(Debug, Clone)]
pub enum ScriptedUsage {
    Fixed(TokenUsage),
    /// Input tokens estimated from the actual request text; output canned.
    /// Still a pure function of the request, but lets transforms show up in
    /// reported usage.
    EstimateInput { output_tokens: u64 },
}

#[derive(Debug, Clone)]
pub enum ScriptedReply {
    Text {
        content: String,
        usage: ScriptedUsage,
        delay_ms: u64,
        logprob: Option<f64>,
    },
    /// Mechanical batch answerer: every `Q<k>: …` line in the request text
    /// becomes an `A<k>: {prefix}…` line. Lets tests verify that the batch
    /// splitter inverts the join for arbitrary member sets.
    NumberedEcho { prefix: String },
    /// Behaves like an unreachable backend.
    Fail,
}

impl ScriptedReply {
    pub fn text(content: impl Into<String>, usage: TokenUsage) -> Self {
        ScriptedReply::Text {
            content: content.into(),
            usage: ScriptedUsage::Fixed(usage),
            delay_ms: 0,
            logprob: None,
        }
    }

    pub fn with_logprob(self, logprob: f64) -> Self {
        match self {
            ScriptedReply::Text { content, usage, delay_ms, .. } => {
                ScriptedReply::Text { content, usage, delay_ms, logprob: Some(logprob) }
            }
            other => other,
        }
    }

    pub fn with_delay_ms(self, delay: u64) -> Self {
        match self {
            ScriptedReply::Text { content, usage, logprob, .. } => {
                ScriptedReply::Text { content, usage, delay_ms: delay, logprob }
            }
            other => other,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedRule {
    pub pattern: Pattern,
    pub reply: ScriptedReply,
}

/// Ordered match rules; the required default rule catches everything else.
#[derive(Debug, Clone)]
pub struct ScriptedBehavior {
    rules: Vec<ScriptedRule>,
    default: ScriptedReply,
}

impl ScriptedBehavior {
    pub fn new(default: ScriptedReply) -> Self {
        Self { rules: Vec::new(), default }
    }

    pub fn rule(mut self, pattern: Pattern, reply: ScriptedReply) -> Self {
        self.rules.push(ScriptedRule { pattern, reply });
        self
    }

    /// Exactly one rule matches: the first hit, else the default.
    pub fn respond(&self, text: &str) -> &ScriptedReply {
        self.rules
            .iter()
            .find(|rule| rule.pattern.matches(text))
            .map(|rule| &rule.reply)
            .unwrap_or(&self.default)
    }
}

pub struct ScriptedBackend {
    descriptor: BackendDescriptor,
    behavior: ScriptedBehavior,
    embed_dim: usize,
    fail_embeds: bool,
    chat_calls: AtomicU64,
    embed_calls: AtomicU64,
}

impl ScriptedBackend {
    pub fn new(behavior: ScriptedBehavior) -> Self {
        Self {
            descriptor: BackendDescriptor {
                kind: BackendKind::ScriptedMock,
                base_url: String::new(),
                model_name: "scripted-mock".to_string(),
                auth_token: None,
                supports_prompt_cache: true,
                supports_logprobs: true,
            },
            behavior,
            embed_dim: 64,
            fail_embeds: false,
            chat_calls: AtomicU64::new(0),
            embed_calls: AtomicU64::new(0),
        }
    }

    /// A mock that answers every request with the same text and usage.
    pub fn always(content: impl Into<String>, usage: TokenUsage) -> Self {
        Self::new(ScriptedBehavior::new(ScriptedReply::text(content, usage)))
    }

    /// A mock that is unreachable for both chat and embeddings.
    pub fn failing() -> Self {
        let mut backend = Self::new(ScriptedBehavior::new(ScriptedReply::Fail));
        backend.fail_embeds = true;
        backend
    }

    pub fn with_model_name(mut self, name: &str) -> Self {
        self.descriptor.model_name = name.to_string();
        self
    }

    pub fn with_embed_dim(mut self, dim: usize) -> Self {
        self.embed_dim = dim;
        self
    }

    pub fn with_logprobs_support(mut self, supported: bool) -> Self {
        self.descriptor.supports_logprobs = supported;
        self
    }

    pub fn chat_calls(&self) -> u64 {
        self.chat_calls.load(Ordering::SeqCst)
    }

    pub fn embed_calls(&self) -> u64 {
        self.embed_calls.load(Ordering::SeqCst)
    }

    /// Deterministic pseudo-embedding: content hash seeds a stream expanded
    /// to the declared dimension, then L2-normalized so cosine thresholds
    /// are meaningful.
    pub fn pseudo_embedding(text: &str, dim: usize) -> Vec<f32> {
        let digest = Sha256::digest(text.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut vector: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0f32)).collect();
        let norm = vector.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            for v in &mut vector {
                *v /= norm;
            }
        }
        vector
    }
}

#[async_trait]
impl ChatClient for ScriptedBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    async fn chat(
        &self,
        messages: &[Message],
        options: &ChatOptions,
    ) -> Result<ChatOutcome, BackendError> {
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        let text = render_messages(messages);
        match self.behavior.respond(&text) {
            ScriptedReply::Fail => Err(BackendError::Unreachable {
                url: "mock://scripted".to_string(),
                detail: "scripted failure".to_string(),
            }),
            ScriptedReply::NumberedEcho { prefix } => {
                let mut answers = Vec::new();
                for line in text.lines() {
                    if let Some(rest) = line.strip_prefix('Q') {
                        if let Some((digits, query)) = rest.split_once(':') {
                            if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
                                answers.push(format!("A{digits}: {prefix}{}", query.trim()));
                            }
                        }
                    }
                }
                let content = if answers.is_empty() {
                    format!("{prefix}{text}")
                } else {
                    answers.join("\n")
                };
                let usage = TokenUsage::new(count_tokens(&text, None), count_tokens(&content, None));
                Ok(ChatOutcome {
                    content,
                    usage,
                    logprob_of_first_token: None,
                    finish_reason: FinishReason::Stop,
                    latency_ms: 0,
                })
            }
            ScriptedReply::Text { content, usage, delay_ms, logprob } => {
                let usage = match usage {
                    ScriptedUsage::Fixed(u) => *u,
                    ScriptedUsage::EstimateInput { output_tokens } => {
                        TokenUsage::new(count_tokens(&text, None), *output_tokens)
                    }
                };
                let logprob = if options.want_logprobs && self.descriptor.supports_logprobs {
                    *logprob
                } else {
                    None
                };
                Ok(ChatOutcome {
                    content: content.clone(),
                    usage,
                    logprob_of_first_token: logprob,
                    finish_reason: FinishReason::Stop,
                    latency_ms: *delay_ms,
                })
            }
        }
    }

    async fn embed(&self, text: &str) -> Result<EmbedOutcome, BackendError> {
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        if self.fail_embeds {
            return Err(BackendError::Unreachable {
                url: "mock://scripted".to_string(),
                detail: "scripted embed failure".to_string(),
            });
        }
        if text.is_empty() {
            return Err(BackendError::Unsupported("cannot embed empty text".into()));
        }
        Ok(EmbedOutcome { vector: Self::pseudo_embedding(text, self.embed_dim), latency_ms: 0 })
    }
}
