//! Local/cloud LLM request-splitting gateway.
//!
//! splitter sits between an agent client and an OpenAI-compatible cloud
//! endpoint and applies up to seven independently togglable token-reduction
//! tactics to every request:
//!
//! - **T1 route** — a small local model classifies requests as trivial or
//!   complex; trivial ones are answered locally and never reach the cloud.
//! - **T2 compress** — the local model rewrites the system prompt (static,
//!   cached) and chat history (dynamic, per call) into shorter form.
//! - **T3 sem-cache** — an embedding-keyed response cache with per-workspace
//!   namespacing and TTL serves near-duplicate queries without a cloud call.
//! - **T4 draft** — the local model drafts a full answer; the cloud is asked
//!   to approve it verbatim or return a correction.
//! - **T5 diff** — for edit-shaped requests, only the hunks around each
//!   change site are sent instead of whole files.
//! - **T6 intent** — free-text prompts are parsed into
//!   `{intent, target, constraints}` and rewritten as a filled template.
//! - **T7 batch** — rapid-fire queries are coalesced into one numbered-answer
//!   cloud call, and stable prompt prefixes are tagged for vendor-side
//!   prompt caching.
//!
//! Stages run in the fixed order T1, T3, T2, T6, T4, T5, T7, then cloud
//! dispatch. Every tactic fails open: a local-model failure leaves the
//! request unchanged and the degradation is logged. The crate also ships the
//! two client-facing surfaces (an OpenAI-compatible HTTP proxy and an MCP
//! stdio tool server), a JSONL telemetry log, and an evaluation harness that
//! measures per-tactic and per-subset savings, cost, latency, and judged
//! quality.

pub mod backends;
pub mod clock;
pub mod config;
pub mod eval;
pub mod pipeline;
pub mod semcache;
pub mod tactics;
pub mod telemetry;
pub mod tokens;
pub mod transport;
pub mod types;

pub use config::{AppConfig, TacticConfig};
pub use pipeline::Pipeline;
pub use types::{ChatRequest, ChatResponse, Message, Role, TokenUsage};
