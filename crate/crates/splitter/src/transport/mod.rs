//! Client-facing surfaces: the OpenAI-compatible HTTP proxy and the MCP
//! stdio tool server. Both feed the same pipeline.

pub mod http;
pub mod mcp;

use std::sync::Arc;

use crate::backends::BackendSet;
use crate::clock::{Clock, SystemClock};
use crate::config::AppConfig;
use crate::pipeline::{Pipeline, PipelineParts};
use crate::semcache::SemanticCache;
use crate::tactics::PromptAssets;
use crate::telemetry::TelemetrySink;

/// Wire a pipeline up from the app config. `run_id` names the telemetry
/// file under `<state_dir>/runs/`.
pub async fn build_pipeline(config: &AppConfig, run_id: String) -> anyhow::Result<Arc<Pipeline>> {
    let backends = BackendSet::from_config(&config.backends);
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let cache = Arc::new(SemanticCache::open(
        &config.cache.path,
        backends.embedding,
        clock.clone(),
    )?);
    let telemetry_path = config.server.state_dir.join("runs").join(format!("{run_id}.jsonl"));
    let telemetry = TelemetrySink::open(&telemetry_path).await?;
    let assets = Arc::new(PromptAssets::load(&config.prompts)?);
    Ok(Pipeline::new(PipelineParts {
        tactics: config.tactics.clone(),
        local: backends.local,
        cloud: backends.cloud,
        cache,
        telemetry,
        assets,
        clock,
        run_id,
    }))
}
