//! Orchestrates the tactic stages in the fixed order T1, T3, T2, T6, T4,
//! T5, T7, then cloud dispatch. A stage that answers (T1 trivial, T3 hit)
//! short-circuits everything after it; a cache miss that reaches the cloud
//! is written back to the cache. Every stage runs under the fail-open
//! guard: a local-model failure leaves the request unchanged and is logged,
//! never surfaced to the caller. No stage makes a parallel cloud call.

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::Arc;

use thiserror::Error;

use crate::backends::{BackendError, ChatClient, ChatOptions};
use crate::clock::Clock;
use crate::config::{ConfigError, TacticConfig};
use crate::semcache::{CacheHit, CacheSnapshot, SemanticCache};
use crate::tactics::batch::{tag_prefix, Batcher};
use crate::tactics::compress::StaticCompressionCache;
use crate::tactics::route::ClassifyResult;
use crate::tactics::{compress, diff, draft, intent, route, PromptAssets};
use crate::telemetry::{decision, EventBuffer, Stage, TelemetrySink};
use crate::types::{
    ChatRequest, ChatResponse, FinishReason, RequestError, ResponseSource, TokenUsage,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid request: {0}")]
    InvalidRequest(#[from] RequestError),
    #[error("invalid per-call override: {0}")]
    Override(#[from] ConfigError),
    #[error("cloud upstream failure: {0}")]
    CloudUpstream(BackendError),
}

/// What one stage did with the request.
#[derive(Debug)]
pub enum StageOutcome {
    Answered(ChatResponse),
    Transformed(ChatRequest),
    PassedThrough,
    SkippedDisabled,
    FailedOpen,
}

/// Run a fallible stage computation. Any error becomes `FailedOpen` (the
/// request passes through unchanged and the degradation is logged); a stage
/// producing an effectively empty transformed request is also failed open.
pub async fn fail_open_guard<Fut>(stage: Stage, action: Fut) -> StageOutcome
where
    Fut: Future<Output = Result<StageOutcome, BackendError>>,
{
    match action.await {
        Ok(StageOutcome::Transformed(request)) if request.is_effectively_empty() => {
            tracing::warn!(stage = stage.as_str(), "stage produced an empty request; failing open");
            StageOutcome::FailedOpen
        }
        Ok(outcome) => outcome,
        Err(error) => {
            tracing::warn!(stage = stage.as_str(), %error, "stage failed open");
            StageOutcome::FailedOpen
        }
    }
}

/// Telemetry captured inside a guarded stage action: local-model usage,
/// stage latency, and any stage-specific annotation.
#[derive(Default)]
struct StageSide {
    local_usage: TokenUsage,
    latency_ms: u64,
    detail: Option<String>,
}

impl StageSide {
    fn apply(&self, event: &mut crate::telemetry::StageEvent) {
        event.local_input_tokens = self.local_usage.input_tokens;
        event.local_output_tokens = self.local_usage.output_tokens;
    }
}

pub struct PipelineParts {
    pub tactics: TacticConfig,
    pub local: Arc<dyn ChatClient>,
    pub cloud: Arc<dyn ChatClient>,
    pub cache: Arc<SemanticCache>,
    pub telemetry: TelemetrySink,
    pub assets: Arc<PromptAssets>,
    pub clock: Arc<dyn Clock>,
    pub run_id: String,
}

pub struct Pipeline {
    run_id: String,
    tactics: TacticConfig,
    local: Arc<dyn ChatClient>,
    cloud: Arc<dyn ChatClient>,
    cache: Arc<SemanticCache>,
    batcher: Arc<Batcher>,
    telemetry: TelemetrySink,
    assets: Arc<PromptAssets>,
    asset_hashes: BTreeMap<String, String>,
    model_versions: BTreeMap<String, String>,
    static_compress: StaticCompressionCache,
    clock: Arc<dyn Clock>,
}

impl Pipeline {
    pub fn new(parts: PipelineParts) -> Arc<Self> {
        let batcher = Batcher::new(
            parts.cloud.clone(),
            parts.tactics.t7_window(),
            parts.tactics.t7.max_batch,
            parts.assets.batch.clone(),
        );
        let model_versions = BTreeMap::from([
            ("local".to_string(), parts.local.descriptor().model_name.clone()),
            ("cloud".to_string(), parts.cloud.descriptor().model_name.clone()),
            ("embedding".to_string(), parts.cache.embedder_model()),
        ]);
        Arc::new(Self {
            run_id: parts.run_id,
            asset_hashes: parts.assets.hashes(),
            model_versions,
            tactics: parts.tactics,
            local: parts.local,
            cloud: parts.cloud,
            cache: parts.cache,
            batcher,
            telemetry: parts.telemetry,
            assets: parts.assets,
            static_compress: StaticCompressionCache::new(),
            clock: parts.clock,
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn tactics(&self) -> &TacticConfig {
        &self.tactics
    }

    pub fn cache(&self) -> &Arc<SemanticCache> {
        &self.cache
    }

    pub fn telemetry(&self) -> &TelemetrySink {
        &self.telemetry
    }

    pub fn cloud_model(&self) -> &str {
        &self.model_versions["cloud"]
    }

    /// Classifier-only entry for the `split.classify` tool: no answering,
    /// no telemetry.
    pub async fn classify_only(
        &self,
        request: &ChatRequest,
    ) -> Result<ClassifyResult, BackendError> {
        route::classify(
            request,
            self.local.as_ref(),
            &self.assets,
            self.tactics.t1.confidence_threshold,
        )
        .await
    }

    /// Cache-lookup-only entry for the `split.cache_lookup` tool.
    pub async fn cache_lookup_only(
        &self,
        request: &ChatRequest,
    ) -> Result<Option<CacheHit>, crate::semcache::CacheError> {
        let (hit, _) = self.cache.lookup(request, self.tactics.t3.similarity_threshold).await?;
        Ok(hit)
    }

    pub async fn run(&self, request: ChatRequest) -> Result<ChatResponse, PipelineError> {
        self.run_with_overrides(request, &BTreeMap::new()).await
    }

    /// Run the pipeline with per-call dotted-path config overrides applied
    /// on top of the process config (per-call wins).
    pub async fn run_with_overrides(
        &self,
        request: ChatRequest,
        overrides: &BTreeMap<String, serde_json::Value>,
    ) -> Result<ChatResponse, PipelineError> {
        request.validate()?;
        let cfg = self.tactics.with_overrides(overrides)?;
        let mut events = EventBuffer::new(
            self.run_id.clone(),
            request.client_request_id.clone(),
            self.model_versions.clone(),
            self.asset_hashes.clone(),
            self.clock.clone(),
        );

        let mut req = request;
        let mut answered: Option<ChatResponse> = None;
        let mut pending_draft: Option<String> = None;
        let mut cache_write: Option<CacheSnapshot> = None;

        // ---- T1 route ----------------------------------------------------
        if !cfg.t1.enabled {
            events.record(Stage::T1, decision::SKIPPED_DISABLED, 0, 0, 0);
        } else {
            let before = req.estimated_tokens();
            match self.classify_for(&req, &cfg).await {
                Err(error) => {
                    tracing::warn!(stage = "t1", %error, "stage failed open");
                    events.record(Stage::T1, decision::FAILED_OPEN, before, before, 0);
                }
                Ok(classified) => match classified.decision.label {
                    route::RouteLabel::Complex => {
                        let event = events.record(
                            Stage::T1,
                            decision::COMPLEX,
                            before,
                            before,
                            classified.latency_ms,
                        );
                        event.local_input_tokens = classified.local_usage.input_tokens;
                        event.local_output_tokens = classified.local_usage.output_tokens;
                    }
                    route::RouteLabel::Trivial => {
                        match route::answer_locally(&req, self.local.as_ref()).await {
                            Err(error) => {
                                tracing::warn!(stage = "t1", %error, "local answer failed open");
                                let event = events.record(
                                    Stage::T1,
                                    decision::FAILED_OPEN,
                                    before,
                                    before,
                                    classified.latency_ms,
                                );
                                event.local_input_tokens = classified.local_usage.input_tokens;
                                event.local_output_tokens = classified.local_usage.output_tokens;
                            }
                            Ok(answer) => {
                                let event = events.record(
                                    Stage::T1,
                                    decision::TRIVIAL,
                                    answer.usage.input_tokens,
                                    answer.usage.output_tokens,
                                    classified.latency_ms + answer.latency_ms,
                                );
                                let local = classified.local_usage + answer.usage;
                                event.local_input_tokens = local.input_tokens;
                                event.local_output_tokens = local.output_tokens;
                                answered = Some(ChatResponse {
                                    content: answer.content,
                                    usage: TokenUsage::ZERO,
                                    source: ResponseSource::Local,
                                    stage_trace: Vec::new(),
                                    finish_reason: answer.finish_reason,
                                });
                            }
                        }
                    }
                },
            }
        }

        // ---- T3 semantic cache lookup --------------------------------------
        if answered.is_none() {
            if !cfg.t3.enabled {
                events.record(Stage::T3, decision::SKIPPED_DISABLED, 0, 0, 0);
            } else if req.no_cache {
                let est = req.estimated_tokens();
                events.record(Stage::T3, decision::BYPASS, est, est, 0);
            } else {
                let est = req.estimated_tokens();
                match self.cache.lookup(&req, cfg.t3.similarity_threshold).await {
                    Err(error) => {
                        tracing::warn!(stage = "t3", %error, "stage failed open");
                        events.record(Stage::T3, decision::FAILED_OPEN, est, est, 0);
                    }
                    Ok((Some(hit), snapshot)) => {
                        let event = events.record(
                            Stage::T3,
                            decision::HIT,
                            hit.entry.response_usage.input_tokens,
                            hit.entry.response_usage.output_tokens,
                            snapshot.embed_latency_ms,
                        );
                        event.detail = Some(format!("{:.6}", hit.similarity));
                        answered = Some(ChatResponse {
                            content: hit.entry.response_content,
                            usage: TokenUsage::ZERO,
                            source: ResponseSource::Cache,
                            stage_trace: Vec::new(),
                            finish_reason: FinishReason::Stop,
                        });
                    }
                    Ok((None, snapshot)) => {
                        events.record(Stage::T3, decision::MISS, est, est, snapshot.embed_latency_ms);
                        cache_write = Some(snapshot);
                    }
                }
            }
        }

        // ---- T2 compress ----------------------------------------------------
        if answered.is_none() {
            if !cfg.t2.enabled {
                events.record(Stage::T2, decision::SKIPPED_DISABLED, 0, 0, 0);
            } else {
                let before = req.estimated_tokens();
                let mut side = StageSide::default();
                let outcome = fail_open_guard(Stage::T2, async {
                    let outcome = compress::compress(
                        &req,
                        self.local.as_ref(),
                        &self.assets,
                        &cfg.t2.mode,
                        &self.static_compress,
                    )
                    .await?;
                    side.local_usage = outcome.local_usage;
                    side.latency_ms = outcome.local_latency_ms;
                    Ok(if outcome.changed {
                        StageOutcome::Transformed(outcome.request)
                    } else {
                        StageOutcome::PassedThrough
                    })
                })
                .await;
                match outcome {
                    StageOutcome::Transformed(transformed) => {
                        let after = transformed.estimated_tokens();
                        let event = events
                            .record(Stage::T2, decision::COMPRESSED, before, after, side.latency_ms);
                        side.apply(event);
                        req = transformed;
                    }
                    StageOutcome::FailedOpen => {
                        events.record(Stage::T2, decision::FAILED_OPEN, before, before, 0);
                    }
                    _ => {
                        let event = events
                            .record(Stage::T2, decision::PASSTHROUGH, before, before, side.latency_ms);
                        side.apply(event);
                    }
                }
            }
        }

        // ---- T6 intent extraction --------------------------------------------
        if answered.is_none() {
            if !cfg.t6.enabled {
                events.record(Stage::T6, decision::SKIPPED_DISABLED, 0, 0, 0);
            } else {
                let before = req.estimated_tokens();
                let mut side = StageSide::default();
                let outcome = fail_open_guard(Stage::T6, async {
                    let outcome = intent::extract(&req, self.local.as_ref(), &self.assets).await?;
                    side.local_usage = outcome.local_usage;
                    side.latency_ms = outcome.local_latency_ms;
                    side.detail = outcome.extracted.map(|intent| intent.intent);
                    Ok(match outcome.request {
                        Some(rewritten) => StageOutcome::Transformed(rewritten),
                        None => StageOutcome::PassedThrough,
                    })
                })
                .await;
                match outcome {
                    StageOutcome::Transformed(rewritten) => {
                        let after = rewritten.estimated_tokens();
                        let event = events
                            .record(Stage::T6, decision::REWRITTEN, before, after, side.latency_ms);
                        event.detail = side.detail.take();
                        side.apply(event);
                        req = rewritten;
                    }
                    StageOutcome::FailedOpen => {
                        events.record(Stage::T6, decision::FAILED_OPEN, before, before, 0);
                    }
                    _ => {
                        let event = events
                            .record(Stage::T6, decision::PASSTHROUGH, before, before, side.latency_ms);
                        side.apply(event);
                    }
                }
            }
        }

        // ---- T4 draft-review ---------------------------------------------------
        if answered.is_none() {
            if !cfg.t4.enabled {
                events.record(Stage::T4, decision::SKIPPED_DISABLED, 0, 0, 0);
            } else {
                let before = req.estimated_tokens();
                let mut side = StageSide::default();
                let mut draft_slot: Option<String> = None;
                let outcome = fail_open_guard(Stage::T4, async {
                    match draft::prepare_review(&req, self.local.as_ref(), &self.assets).await? {
                        // an empty draft is a degenerate local output
                        None => Err(BackendError::Protocol("empty draft".into())),
                        Some(outcome) => {
                            side.local_usage = outcome.local_usage;
                            side.latency_ms = outcome.local_latency_ms;
                            draft_slot = Some(outcome.draft);
                            Ok(StageOutcome::Transformed(outcome.request))
                        }
                    }
                })
                .await;
                match outcome {
                    StageOutcome::Transformed(review) => {
                        let after = review.estimated_tokens();
                        let event = events
                            .record(Stage::T4, decision::DRAFTED, before, after, side.latency_ms);
                        side.apply(event);
                        pending_draft = draft_slot;
                        req = review;
                    }
                    _ => {
                        events.record(Stage::T4, decision::FAILED_OPEN, before, before, 0);
                    }
                }
            }
        }

        // ---- T5 minimal-diff ------------------------------------------------------
        if answered.is_none() {
            if !cfg.t5.enabled {
                events.record(Stage::T5, decision::SKIPPED_DISABLED, 0, 0, 0);
            } else {
                let before = req.estimated_tokens();
                if !diff::detect(&req, cfg.t5.length_threshold) {
                    events.record(Stage::T5, decision::SKIPPED, before, before, 0);
                } else {
                    let mut side = StageSide::default();
                    let outcome = fail_open_guard(Stage::T5, async {
                        let outcome =
                            diff::extract(&req, self.local.as_ref(), &self.assets, cfg.t5.window_lines)
                                .await?;
                        side.local_usage = outcome.local_usage;
                        side.latency_ms = outcome.local_latency_ms;
                        Ok(match outcome.request {
                            Some(extracted) => StageOutcome::Transformed(extracted),
                            None => StageOutcome::PassedThrough,
                        })
                    })
                    .await;
                    match outcome {
                        StageOutcome::Transformed(extracted) => {
                            let after = extracted.estimated_tokens();
                            let event = events
                                .record(Stage::T5, decision::EXTRACTED, before, after, side.latency_ms);
                            side.apply(event);
                            req = extracted;
                        }
                        StageOutcome::FailedOpen => {
                            events.record(Stage::T5, decision::FAILED_OPEN, before, before, 0);
                        }
                        _ => {
                            let event = events
                                .record(Stage::T5, decision::NO_SITES, before, before, side.latency_ms);
                            side.apply(event);
                        }
                    }
                }
            }
        }

        // ---- T7 batch + prefix tagging, then cloud dispatch ----------------------
        let mut response = match answered {
            Some(response) => response,
            None if !cfg.t7.enabled => {
                events.record(Stage::T7, decision::SKIPPED_DISABLED, 0, 0, 0);
                let options = ChatOptions {
                    temperature: req.temperature,
                    max_output_tokens: req.max_output_tokens,
                    want_logprobs: false,
                    cache_prefix_len: req.cache_prefix_len,
                };
                match self.cloud.chat(&req.messages, &options).await {
                    Err(error) => {
                        events.record(Stage::Cloud, decision::ERROR, 0, 0, 0);
                        self.finish(events, None).await;
                        return Err(PipelineError::CloudUpstream(error));
                    }
                    Ok(outcome) => {
                        events.record(
                            Stage::Cloud,
                            decision::OK,
                            outcome.usage.input_tokens,
                            outcome.usage.output_tokens,
                            outcome.latency_ms,
                        );
                        ChatResponse {
                            content: outcome.content,
                            usage: outcome.usage,
                            source: ResponseSource::Cloud,
                            stage_trace: Vec::new(),
                            finish_reason: outcome.finish_reason,
                        }
                    }
                }
            }
            None => {
                let est = req.estimated_tokens();
                let tagged = tag_prefix(
                    &mut req,
                    cfg.t7.prefix_min_tokens,
                    cfg.t7.vendor_prompt_cache_supported,
                );
                match self.batcher.submit(req.clone()).await {
                    Err(error) => {
                        let event = events.record(Stage::T7, decision::ERROR, est, est, 0);
                        event.prefix_tagged = Some(tagged);
                        events.record(Stage::Cloud, decision::ERROR, 0, 0, 0);
                        self.finish(events, None).await;
                        return Err(PipelineError::CloudUpstream(error));
                    }
                    Ok(reply) => {
                        let event =
                            events.record(Stage::T7, reply.decision, est, est, reply.wait_ms);
                        event.batch_group = Some(format!("g{}", reply.group_id));
                        event.batch_size = Some(reply.group_size as u32);
                        event.prefix_tagged = Some(tagged);
                        events.record(
                            Stage::Cloud,
                            decision::OK,
                            reply.usage_share.input_tokens,
                            reply.usage_share.output_tokens,
                            reply.cloud_latency_ms,
                        );
                        ChatResponse {
                            content: reply.content,
                            usage: reply.usage_share,
                            source: ResponseSource::Cloud,
                            stage_trace: Vec::new(),
                            finish_reason: reply.finish_reason,
                        }
                    }
                }
            }
        };

        // ---- T4 post-processing: an approval swaps in the draft -------------------
        if let Some(draft_text) = pending_draft {
            if response.source == ResponseSource::Cloud {
                let (content, approved) = draft::resolve_review(&response.content, &draft_text);
                response.content = content;
                events.update_decision(
                    Stage::T4,
                    if approved { decision::APPROVED } else { decision::CORRECTED },
                );
            }
        }

        // ---- T3 write on MISS -------------------------------------------------------
        if let Some(snapshot) = cache_write {
            if response.source == ResponseSource::Cloud {
                if let Err(error) = self.cache.store(&snapshot, &response, cfg.t3_ttl()).await {
                    tracing::warn!(%error, "cache write-on-miss failed; request unaffected");
                }
            }
        }

        self.finish(events, Some(&mut response)).await;
        Ok(response)
    }

    async fn classify_for(
        &self,
        request: &ChatRequest,
        cfg: &TacticConfig,
    ) -> Result<ClassifyResult, BackendError> {
        route::classify(request, self.local.as_ref(), &self.assets, cfg.t1.confidence_threshold)
            .await
    }

    /// Attach the trace and flush telemetry before the response returns.
    async fn finish(&self, events: EventBuffer, response: Option<&mut ChatResponse>) {
        let events = events.into_events();
        if let Some(response) = response {
            response.stage_trace = events.clone();
        }
        self.telemetry.emit_all(events).await;
    }
}
