//! The evaluation runner: for each (workload, subset, pass) cell it builds
//! a fresh cache and telemetry file, pushes every sample through the
//! pipeline, and recomputes all metrics from the run's raw telemetry. The
//! baseline (all-disabled) cell runs first per workload and anchors the
//! saved fraction.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendSet, ChatClient};
use crate::clock::{Clock, SystemClock};
use crate::config::{BackendsConfig, TacticConfig};
use crate::pipeline::{Pipeline, PipelineParts};
use crate::semcache::SemanticCache;
use crate::tactics::PromptAssets;
use crate::telemetry::{read_events, Stage, StageEvent, TelemetrySink};
use crate::tokens::{cost, saved_percent, tokens_saved, RateCard};
use crate::types::{ChatRequest, TokenUsage};

use super::metrics::{nearest_rank, request_latencies, secondary_metrics};
use super::mocks;
use super::outputs;
use super::subsets::SubsetSpec;
use super::workload::{WorkloadClass, WorkloadSample};

/// Aggregated metrics for one (workload, subset, pass) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub workload: WorkloadClass,
    pub subset: String,
    pub pass_index: usize,
    pub cloud_usage: TokenUsage,
    pub local_usage: TokenUsage,
    /// The same-pass baseline this run's savings are measured against.
    pub baseline_cloud_usage: TokenUsage,
    pub saved_fraction: f64,
    pub cost_usd: f64,
    pub latency_median_ms: u64,
    pub latency_p95_ms: u64,
    pub latency_p99_ms: u64,
    pub secondary: BTreeMap<String, f64>,
    pub model_versions: BTreeMap<String, String>,
    pub timestamp_ms: i64,
    /// Set when a backend died mid-run; metrics cover the partial run.
    pub failed: bool,
    pub telemetry_path: PathBuf,
}

impl RunResult {
    pub fn saved_pct(&self) -> f64 {
        saved_percent(self.saved_fraction)
    }
}

/// Which backends a run uses: the deterministic scripted suite, or live
/// clients built from config.
pub enum EvalBackends {
    Scripted,
    Live(Box<BackendsConfig>),
}

pub struct EvalOptions {
    pub passes: usize,
    pub out_dir: PathBuf,
    pub subsets: Vec<SubsetSpec>,
    pub rates: RateCard,
    pub tactic_defaults: TacticConfig,
    pub backends: EvalBackends,
    /// Subsets whose pass-1 outputs are judged pairwise against baseline
    /// (position-debiased, the cloud backend acting as judge). Empty skips
    /// the quality pass.
    pub judge_subsets: Vec<String>,
}

impl EvalOptions {
    pub fn scripted(out_dir: PathBuf, subsets: Vec<SubsetSpec>) -> Self {
        Self {
            passes: 2,
            out_dir,
            subsets,
            rates: RateCard::default(),
            tactic_defaults: TacticConfig::default(),
            backends: EvalBackends::Scripted,
            judge_subsets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgedCell {
    pub workload: WorkloadClass,
    pub subset: String,
    pub tallies: super::judge::JudgeTallies,
    pub verdicts: Vec<super::judge::JudgeVerdict>,
}

pub struct EvalReport {
    pub results: Vec<RunResult>,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
    pub figure_paths: Vec<PathBuf>,
    pub judgments: Vec<JudgedCell>,
    pub judgments_path: Option<PathBuf>,
}

/// Run the full matrix: every subset × workload × pass, baseline first.
pub async fn run_eval(
    workloads: &[(WorkloadClass, Vec<WorkloadSample>)],
    options: &EvalOptions,
) -> anyhow::Result<EvalReport> {
    std::fs::create_dir_all(&options.out_dir)?;
    let assets = Arc::new(PromptAssets::builtin());
    let mut subsets = options.subsets.clone();
    if !subsets.iter().any(|s| s.is_baseline()) {
        subsets.insert(0, SubsetSpec::baseline());
    } else {
        // baseline anchors everything; make sure it runs first
        subsets.sort_by_key(|s| !s.is_baseline() as u8);
    }

    let mut results = Vec::new();
    // pass-1 outputs per (workload, subset), kept for the quality pass
    let mut outputs_by_cell: BTreeMap<(WorkloadClass, String), Vec<(String, String)>> =
        BTreeMap::new();
    for pass_index in 1..=options.passes {
        for (class, samples) in workloads {
            let mut baseline_usage: Option<TokenUsage> = None;
            for subset in &subsets {
                let (result, cell_outputs) = run_cell(
                    *class,
                    samples,
                    subset,
                    pass_index,
                    options,
                    &assets,
                    baseline_usage,
                )
                .await?;
                if subset.is_baseline() {
                    baseline_usage = Some(result.cloud_usage);
                }
                let wants_outputs =
                    subset.is_baseline() || options.judge_subsets.contains(&subset.name);
                if pass_index == 1 && wants_outputs {
                    outputs_by_cell.insert((*class, subset.name.clone()), cell_outputs);
                }
                results.push(result);
            }
        }
    }

    let judgments = if options.judge_subsets.is_empty() {
        Vec::new()
    } else {
        judge_quality(workloads, options, &assets, &outputs_by_cell).await?
    };

    let csv_path = options.out_dir.join("results.csv");
    outputs::write_results_csv(&csv_path, &results)?;
    let summary_path = options.out_dir.join("summary.json");
    outputs::write_summary_json(&summary_path, &results, options.passes)?;
    let figure_paths = outputs::write_figure_data(&options.out_dir.join("figures"), &results)?;
    let judgments_path = if judgments.is_empty() {
        None
    } else {
        let path = options.out_dir.join("judgments.json");
        std::fs::write(&path, serde_json::to_string_pretty(&judgments)?)?;
        Some(path)
    };

    Ok(EvalReport { results, csv_path, summary_path, figure_paths, judgments, judgments_path })
}

/// Pairwise position-debiased quality pass: each judged subset's pass-1
/// outputs against the baseline's, the cloud backend acting as judge.
async fn judge_quality(
    workloads: &[(WorkloadClass, Vec<WorkloadSample>)],
    options: &EvalOptions,
    assets: &Arc<PromptAssets>,
    outputs_by_cell: &BTreeMap<(WorkloadClass, String), Vec<(String, String)>>,
) -> anyhow::Result<Vec<JudgedCell>> {
    let mut judged = Vec::new();
    for (class, samples) in workloads {
        let judge_backend: Arc<dyn ChatClient> = match &options.backends {
            EvalBackends::Scripted => mocks::build_for(*class, samples, assets).cloud,
            EvalBackends::Live(config) => BackendSet::from_config(config).cloud,
        };
        let Some(baseline_outputs) = outputs_by_cell.get(&(*class, "baseline".to_string()))
        else {
            continue;
        };
        let baseline: BTreeMap<&str, &str> = baseline_outputs
            .iter()
            .map(|(id, content)| (id.as_str(), content.as_str()))
            .collect();
        let prompts: BTreeMap<&str, String> = samples
            .iter()
            .map(|s| {
                let ask = s
                    .messages
                    .iter()
                    .rev()
                    .find(|m| m.role == crate::types::Role::User)
                    .map(|m| m.content.chars().take(4_000).collect())
                    .unwrap_or_default();
                (s.id.as_str(), ask)
            })
            .collect();
        for subset_name in &options.judge_subsets {
            let Some(treatment_outputs) = outputs_by_cell.get(&(*class, subset_name.clone()))
            else {
                continue;
            };
            let pairs: Vec<super::judge::OutputPair> = treatment_outputs
                .iter()
                .filter_map(|(id, treatment)| {
                    let base = baseline.get(id.as_str())?;
                    Some(super::judge::OutputPair {
                        id: id.clone(),
                        prompt: prompts.get(id.as_str()).cloned().unwrap_or_default(),
                        baseline: base.to_string(),
                        treatment: treatment.clone(),
                    })
                })
                .collect();
            let (verdicts, tallies) =
                super::judge::judge_pairs(&pairs, judge_backend.as_ref()).await;
            judged.push(JudgedCell {
                workload: *class,
                subset: subset_name.clone(),
                tallies,
                verdicts,
            });
        }
    }
    Ok(judged)
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

async fn run_cell(
    class: WorkloadClass,
    samples: &[WorkloadSample],
    subset: &SubsetSpec,
    pass_index: usize,
    options: &EvalOptions,
    assets: &Arc<PromptAssets>,
    baseline_usage: Option<TokenUsage>,
) -> anyhow::Result<(RunResult, Vec<(String, String)>)> {
    let run_id = format!("{}-{}-p{pass_index}", class.as_str(), sanitize(&subset.name));
    let telemetry_path = options.out_dir.join("runs").join(format!("{run_id}.jsonl"));
    if telemetry_path.exists() {
        std::fs::remove_file(&telemetry_path)?;
    }
    let telemetry = TelemetrySink::open(&telemetry_path).await?;
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);

    let (local, cloud, embedding): (Arc<dyn ChatClient>, Arc<dyn ChatClient>, Arc<dyn ChatClient>) =
        match &options.backends {
            EvalBackends::Scripted => {
                let suite = mocks::build_for(class, samples, assets);
                (suite.local, suite.cloud, suite.embedding)
            }
            EvalBackends::Live(config) => {
                let set = BackendSet::from_config(config);
                (set.local, set.cloud, set.embedding)
            }
        };

    // fresh cache per run
    let cache = Arc::new(SemanticCache::open(":memory:", embedding, clock.clone())?);
    let tactics = subset.apply(&options.tactic_defaults);
    let pipeline = Pipeline::new(PipelineParts {
        tactics,
        local,
        cloud,
        cache,
        telemetry,
        assets: assets.clone(),
        clock: clock.clone(),
        run_id: run_id.clone(),
    });

    let mut failed = false;
    let mut cell_outputs = Vec::with_capacity(samples.len());
    for sample in samples {
        let mut request = ChatRequest::new(sample.messages.clone(), "eval");
        request.client_request_id = sample.id.clone();
        request.temperature = Some(0.0);
        match pipeline.run(request).await {
            Ok(response) => cell_outputs.push((sample.id.clone(), response.content)),
            Err(error) => {
                tracing::warn!(run = run_id, %error, "run failed mid-way; partial results retained");
                failed = true;
                break;
            }
        }
    }

    let (events, _) = read_events(&telemetry_path)?;
    let result = assemble_result(
        class,
        subset,
        pass_index,
        &events,
        samples,
        options,
        baseline_usage,
        failed,
        telemetry_path,
        pipeline.run_id().to_string(),
        clock.now_ms(),
    );
    Ok((result, cell_outputs))
}

#[allow(clippy::too_many_arguments)]
fn assemble_result(
    class: WorkloadClass,
    subset: &SubsetSpec,
    pass_index: usize,
    events: &[StageEvent],
    samples: &[WorkloadSample],
    options: &EvalOptions,
    baseline_usage: Option<TokenUsage>,
    failed: bool,
    telemetry_path: PathBuf,
    _run_id: String,
    timestamp_ms: i64,
) -> RunResult {
    let cloud_usage = cloud_usage_of(events);
    let local_usage = local_usage_of(events);
    let baseline = baseline_usage.unwrap_or(cloud_usage);
    let saved_fraction = if subset.is_baseline() {
        0.0
    } else {
        tokens_saved(baseline, cloud_usage).unwrap_or(0.0)
    };
    let latencies = request_latencies(events);
    let model_versions =
        events.first().map(|e| e.model_versions.clone()).unwrap_or_default();
    RunResult {
        workload: class,
        subset: subset.name.clone(),
        pass_index,
        cloud_usage,
        local_usage,
        baseline_cloud_usage: baseline,
        saved_fraction,
        cost_usd: cost(cloud_usage, &options.rates, 0).unwrap_or(0.0),
        latency_median_ms: nearest_rank(&latencies, 50.0),
        latency_p95_ms: nearest_rank(&latencies, 95.0),
        latency_p99_ms: nearest_rank(&latencies, 99.0),
        secondary: secondary_metrics(events, samples, options.tactic_defaults.t7.max_batch),
        model_versions,
        timestamp_ms,
        failed,
        telemetry_path,
    }
}

/// Total cloud usage of a run: the sum over its cloud stage events.
pub fn cloud_usage_of(events: &[StageEvent]) -> TokenUsage {
    events
        .iter()
        .filter(|e| e.stage == Stage::Cloud)
        .fold(TokenUsage::ZERO, |acc, e| acc + TokenUsage::new(e.tokens_in, e.tokens_out))
}

pub fn local_usage_of(events: &[StageEvent]) -> TokenUsage {
    events.iter().fold(TokenUsage::ZERO, |acc, e| {
        acc + TokenUsage::new(e.local_input_tokens, e.local_output_tokens)
    })
}

/// Recompute a run's saved fraction from its raw telemetry file — the
/// reconciliation path used by the acceptance suite.
pub fn reconcile_saved_fraction(result: &RunResult) -> anyhow::Result<f64> {
    let (events, _) = read_events(&result.telemetry_path)?;
    let cloud = cloud_usage_of(&events);
    if result.subset == "baseline" {
        return Ok(0.0);
    }
    Ok(tokens_saved(result.baseline_cloud_usage, cloud)?)
}

/// Memoizing subset metric used by the greedy chain: measures a subset by
/// actually running the cell (scripted backends), caching repeats.
pub struct MeasuredSubsets<'a> {
    pub class: WorkloadClass,
    pub samples: &'a [WorkloadSample],
    pub options: &'a EvalOptions,
    pub assets: Arc<PromptAssets>,
    pub baseline_usage: Option<TokenUsage>,
    pub memo: BTreeMap<String, f64>,
}

impl<'a> MeasuredSubsets<'a> {
    pub async fn measure(&mut self, subset: &SubsetSpec) -> anyhow::Result<f64> {
        if let Some(value) = self.memo.get(&subset.name) {
            return Ok(*value);
        }
        if self.baseline_usage.is_none() {
            let (baseline, _) = run_cell(
                self.class,
                self.samples,
                &SubsetSpec::baseline(),
                0,
                self.options,
                &self.assets,
                None,
            )
            .await?;
            self.baseline_usage = Some(baseline.cloud_usage);
        }
        let (result, _) = run_cell(
            self.class,
            self.samples,
            subset,
            0,
            self.options,
            &self.assets,
            self.baseline_usage,
        )
        .await?;
        self.memo.insert(subset.name.clone(), result.saved_fraction);
        Ok(result.saved_fraction)
    }
}

#[async_trait::async_trait]
impl<'a> super::subsets::SubsetMetric for MeasuredSubsets<'a> {
    async fn saved_fraction(&mut self, enabled: &std::collections::BTreeSet<super::subsets::Tactic>) -> f64 {
        let spec = SubsetSpec::of(enabled.clone());
        self.measure(&spec).await.unwrap_or(f64::NEG_INFINITY)
    }
}

/// Check `path` exists and is non-empty (used for emitted artifacts).
pub fn artifact_ok(path: &Path) -> bool {
    std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false)
}
