//! Append-only JSONL telemetry: one `StageEvent` per pipeline stage, one
//! file per run. The eval harness and `split.stats` replay these events.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::AsyncWriteExt;
use tokio::sync::{mpsc, oneshot};

use crate::clock::Clock;
use crate::tokens::tokens_saved;
use crate::types::TokenUsage;

pub const SCHEMA_VERSION: u32 = 1;

/// Pipeline stages in execution order. `Cloud` is the final dispatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
    T7,
    Cloud,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::T1 => "t1",
            Stage::T2 => "t2",
            Stage::T3 => "t3",
            Stage::T4 => "t4",
            Stage::T5 => "t5",
            Stage::T6 => "t6",
            Stage::T7 => "t7",
            Stage::Cloud => "cloud",
        }
    }
}

/// The order stages execute in and the order their events must appear in.
pub const PIPELINE_ORDER: [Stage; 8] = [
    Stage::T1,
    Stage::T3,
    Stage::T2,
    Stage::T6,
    Stage::T4,
    Stage::T5,
    Stage::T7,
    Stage::Cloud,
];

/// Decision strings recorded in stage events.
pub mod decision {
    pub const SKIPPED_DISABLED: &str = "skipped_disabled";
    pub const FAILED_OPEN: &str = "failed_open";
    pub const TRIVIAL: &str = "trivial";
    pub const COMPLEX: &str = "complex";
    pub const HIT: &str = "hit";
    pub const MISS: &str = "miss";
    pub const BYPASS: &str = "bypass";
    pub const COMPRESSED: &str = "compressed";
    pub const PASSTHROUGH: &str = "passthrough";
    pub const REWRITTEN: &str = "rewritten";
    pub const DRAFTED: &str = "drafted";
    pub const APPROVED: &str = "approved";
    pub const CORRECTED: &str = "corrected";
    pub const EXTRACTED: &str = "extracted";
    pub const NO_SITES: &str = "no_sites";
    pub const SKIPPED: &str = "skipped";
    pub const BATCHED: &str = "batched";
    pub const SINGLETON: &str = "singleton";
    pub const FALLBACK: &str = "fallback";
    pub const DIRECT: &str = "direct";
    pub const OK: &str = "ok";
    pub const ERROR: &str = "error";
}

/// One per-stage telemetry record.
///
/// `tokens_in`/`tokens_out` are stage-specific: estimated request tokens
/// before/after for transform stages, and answer usage for answering stages
/// (local usage for a T1 answer, the stored usage for a cache hit, wire
/// usage for the cloud call). `local_input_tokens`/`local_output_tokens`
/// accumulate every local-model call the stage made.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageEvent {
    #[serde(default = "default_version")]
    pub v: u32,
    pub run_id: String,
    pub request_id: String,
    /// Monotonic per-request sequence number; breaks timestamp ties.
    pub seq: u32,
    pub stage: Stage,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub latency_ms: u64,
    pub decision: String,
    pub timestamp_ms: i64,
    pub model_versions: BTreeMap<String, String>,
    pub prompt_asset_hashes: BTreeMap<String, String>,
    #[serde(default)]
    pub local_input_tokens: u64,
    #[serde(default)]
    pub local_output_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix_tagged: Option<bool>,
    /// Stage-specific annotation: the extracted intent for a T6 rewrite,
    /// the similarity for a cache hit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

fn default_version() -> u32 {
    SCHEMA_VERSION
}

/// Collects the events of a single request in pipeline order; the sink
/// writes them as one batch before the response is returned.
pub struct EventBuffer {
    run_id: String,
    request_id: String,
    model_versions: BTreeMap<String, String>,
    prompt_asset_hashes: BTreeMap<String, String>,
    clock: Arc<dyn Clock>,
    last_timestamp_ms: i64,
    events: Vec<StageEvent>,
}

impl EventBuffer {
    pub fn new(
        run_id: String,
        request_id: String,
        model_versions: BTreeMap<String, String>,
        prompt_asset_hashes: BTreeMap<String, String>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            run_id,
            request_id,
            model_versions,
            prompt_asset_hashes,
            clock,
            last_timestamp_ms: 0,
            events: Vec::new(),
        }
    }

    /// Append a stage event and return it for extension fields.
    pub fn record(
        &mut self,
        stage: Stage,
        decision: &str,
        tokens_in: u64,
        tokens_out: u64,
        latency_ms: u64,
    ) -> &mut StageEvent {
        // Timestamps never go backwards within a request even under a
        // manual clock.
        let now = self.clock.now_ms().max(self.last_timestamp_ms);
        self.last_timestamp_ms = now;
        let event = StageEvent {
            v: SCHEMA_VERSION,
            run_id: self.run_id.clone(),
            request_id: self.request_id.clone(),
            seq: self.events.len() as u32,
            stage,
            tokens_in,
            tokens_out,
            latency_ms,
            decision: decision.to_string(),
            timestamp_ms: now,
            model_versions: self.model_versions.clone(),
            prompt_asset_hashes: self.prompt_asset_hashes.clone(),
            local_input_tokens: 0,
            local_output_tokens: 0,
            batch_group: None,
            batch_size: None,
            prefix_tagged: None,
            detail: None,
        };
        self.events.push(event);
        self.events.last_mut().expect("just pushed")
    }

    pub fn last_mut(&mut self) -> Option<&mut StageEvent> {
        self.events.last_mut()
    }

    /// Rewrite the decision of the most recent event for `stage` (used when
    /// a stage's outcome is only known after the cloud responds).
    pub fn update_decision(&mut self, stage: Stage, decision: &str) {
        if let Some(event) = self.events.iter_mut().rev().find(|e| e.stage == stage) {
            event.decision = decision.to_string();
        }
    }

    pub fn events(&self) -> &[StageEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<StageEvent> {
        self.events
    }
}

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("telemetry io error: {0}")]
    Io(#[from] std::io::Error),
}

enum SinkMessage {
    Emit(Vec<StageEvent>, oneshot::Sender<()>),
}

/// Handle to the single appender task that owns the run's JSONL file.
/// Emission is best-effort: disk failures are logged, never surfaced.
#[derive(Clone)]
pub struct TelemetrySink {
    tx: mpsc::Sender<SinkMessage>,
    path: Arc<PathBuf>,
}

impl TelemetrySink {
    pub async fn open(path: &Path) -> Result<Self, TelemetryError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                tokio::fs::create_dir_all(parent).await?;
            }
        }
        let file = tokio::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .await?;
        let (tx, mut rx) = mpsc::channel::<SinkMessage>(256);
        let log_path = path.to_path_buf();
        tokio::spawn(async move {
            let mut writer = tokio::io::BufWriter::new(file);
            while let Some(SinkMessage::Emit(events, ack)) = rx.recv().await {
                let mut buf = Vec::new();
                for event in &events {
                    match serde_json::to_vec(event) {
                        Ok(mut line) => {
                            buf.append(&mut line);
                            buf.push(b'\n');
                        }
                        Err(e) => eprintln!("telemetry: failed to serialize event: {e}"),
                    }
                }
                if let Err(e) = writer.write_all(&buf).await {
                    eprintln!("telemetry: write to {} failed: {e}", log_path.display());
                }
                if let Err(e) = writer.flush().await {
                    eprintln!("telemetry: flush of {} failed: {e}", log_path.display());
                }
                let _ = ack.send(());
            }
        });
        Ok(Self { tx, path: Arc::new(path.to_path_buf()) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append all events as whole lines and wait until they are flushed.
    pub async fn emit_all(&self, events: Vec<StageEvent>) {
        if events.is_empty() {
            return;
        }
        let (ack_tx, ack_rx) = oneshot::channel();
        if self.tx.send(SinkMessage::Emit(events, ack_tx)).await.is_err() {
            eprintln!("telemetry: appender task is gone; events dropped");
            return;
        }
        let _ = ack_rx.await;
    }
}

/// Parse a JSONL run log. Corrupt lines are skipped and counted.
pub fn read_events(path: &Path) -> Result<(Vec<StageEvent>, usize), TelemetryError> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_events(&text))
}

pub fn parse_events(text: &str) -> (Vec<StageEvent>, usize) {
    let mut events = Vec::new();
    let mut skipped = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<StageEvent>(line) {
            Ok(event) => events.push(event),
            Err(_) => skipped += 1,
        }
    }
    (events, skipped)
}

/// Aggregates backing `split.stats` and the `stats` CLI subcommand.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StatsReport {
    pub request_count: u64,
    pub local_answer_rate: f64,
    pub cache_hit_rate: Option<f64>,
    pub cloud_tokens: u64,
    pub local_tokens: u64,
    /// Savings vs. a counterfactual where every answered request had gone to
    /// the cloud at its recorded token counts.
    pub est_savings_vs_all_cloud: f64,
    pub skipped_lines: u64,
}

/// Pure aggregation over parsed events, optionally restricted to events at
/// or after `since_ms`.
pub fn stats(events: &[StageEvent], since_ms: Option<i64>, skipped_lines: usize) -> StatsReport {
    let mut request_ids = std::collections::BTreeSet::new();
    let mut local_answered = std::collections::BTreeSet::new();
    let mut cache_answered = std::collections::BTreeSet::new();
    let mut lookups = 0u64;
    let mut hits = 0u64;
    let mut cloud = TokenUsage::ZERO;
    let mut local = TokenUsage::ZERO;
    let mut avoided = TokenUsage::ZERO;

    for event in events {
        if let Some(since) = since_ms {
            if event.timestamp_ms < since {
                continue;
            }
        }
        request_ids.insert(event.request_id.clone());
        local.input_tokens += event.local_input_tokens;
        local.output_tokens += event.local_output_tokens;
        match event.stage {
            Stage::T1 if event.decision == decision::TRIVIAL => {
                local_answered.insert(event.request_id.clone());
                avoided += TokenUsage::new(event.tokens_in, event.tokens_out);
            }
            Stage::T3 => match event.decision.as_str() {
                decision::HIT => {
                    lookups += 1;
                    hits += 1;
                    cache_answered.insert(event.request_id.clone());
                    avoided += TokenUsage::new(event.tokens_in, event.tokens_out);
                }
                decision::MISS => lookups += 1,
                _ => {}
            },
            Stage::Cloud => {
                cloud += TokenUsage::new(event.tokens_in, event.tokens_out);
            }
            _ => {}
        }
    }

    let request_count = request_ids.len() as u64;
    let answered = local_answered.len() + cache_answered.len();
    let baseline = cloud + avoided;
    let est_savings = tokens_saved(baseline, cloud).unwrap_or(0.0);
    StatsReport {
        request_count,
        local_answer_rate: if request_count == 0 {
            0.0
        } else {
            local_answered.len() as f64 / request_count as f64
        },
        cache_hit_rate: if lookups == 0 { None } else { Some(hits as f64 / lookups as f64) },
        cloud_tokens: cloud.total(),
        local_tokens: local.total(),
        est_savings_vs_all_cloud: if answered == 0 && cloud.total() == 0 { 0.0 } else { est_savings },
        skipped_lines: skipped_lines as u64,
    }
}
