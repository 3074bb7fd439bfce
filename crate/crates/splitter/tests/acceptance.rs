//! Acceptance suite: one test per criterion, each printing a PASS line.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use splitter::backends::{
    ChatClient, Pattern, ScriptedBackend, ScriptedBehavior, ScriptedReply,
};
use splitter::clock::ManualClock;
use splitter::config::TacticConfig;
use splitter::eval::judge::{judge_pairs, OutputPair};
use splitter::eval::runner::reconcile_saved_fraction;
use splitter::eval::subsets::{greedy_additive, SubsetMetric, Tactic};
use splitter::eval::workload::builtin_workloads;
use splitter::eval::{run_eval, EvalOptions};
use splitter::pipeline::{Pipeline, PipelineParts};
use splitter::semcache::SemanticCache;
use splitter::tactics::draft;
use splitter::tactics::prompts::{marker, PromptAssets};
use splitter::telemetry::{decision, Stage, TelemetrySink, PIPELINE_ORDER};
use splitter::tokens::{saved_percent, tokens_saved};
use splitter::transport::{http, mcp::McpServer};
use splitter::types::{ChatRequest, Message, ResponseSource, TokenUsage};

fn pass(n: u32, name: &str) {
    println!("ACCEPTANCE {n:02} {name}: PASS");
}

async fn build_pipeline(
    tactics: TacticConfig,
    local: Arc<ScriptedBackend>,
    cloud: Arc<ScriptedBackend>,
    clock: Arc<ManualClock>,
    dir: &std::path::Path,
    run_id: &str,
) -> Arc<Pipeline> {
    let telemetry = TelemetrySink::open(&dir.join(format!("{run_id}.jsonl"))).await.unwrap();
    let embedder: Arc<dyn ChatClient> = local.clone();
    let cache = Arc::new(SemanticCache::open(":memory:", embedder, clock.clone()).unwrap());
    Pipeline::new(PipelineParts {
        tactics,
        local,
        cloud,
        cache,
        telemetry,
        assets: Arc::new(PromptAssets::builtin()),
        clock,
        run_id: run_id.to_string(),
    })
}

// -------------------------------------------------------------------------
// 1. Metric fixture reproduction
// -------------------------------------------------------------------------
#[test]
fn acceptance_01_metric_fixture_reproduction() {
    let fixture = include_str!("fixtures/token_totals.csv");
    let mut reader = csv::Reader::from_reader(fixture.as_bytes());
    let mut baselines: BTreeMap<String, u64> = BTreeMap::new();
    let mut rows: Vec<(String, String, u64, f64)> = Vec::new();
    for record in reader.records() {
        let record = record.unwrap();
        let workload = record[0].to_string();
        let subset = record[1].to_string();
        let cloud_tokens: u64 = record[2].parse().unwrap();
        if subset == "baseline" {
            baselines.insert(workload, cloud_tokens);
        } else {
            let expected: f64 = record[4].parse().unwrap();
            rows.push((workload, subset, cloud_tokens, expected));
        }
    }
    assert_eq!(baselines.len(), 4);
    assert!(rows.len() >= 25);
    for (workload, subset, cloud_tokens, expected) in &rows {
        let baseline = TokenUsage::new(baselines[workload], 0);
        let treatment = TokenUsage::new(*cloud_tokens, 0);
        let pct = saved_percent(tokens_saved(baseline, treatment).unwrap());
        assert!(
            (pct - expected).abs() <= 0.1 + 1e-9,
            "{workload}/{subset}: computed {pct} vs fixture {expected}"
        );
    }
    // the two pinned spot checks
    let wl1_t1 = rows.iter().find(|r| r.0 == "WL1_edit" && r.1 == "T1").unwrap();
    assert_eq!(
        saved_percent(
            tokens_saved(TokenUsage::new(11_007, 0), TokenUsage::new(wl1_t1.2, 0)).unwrap()
        ),
        30.3
    );
    let wl2_pair = rows.iter().find(|r| r.0 == "WL2_explain" && r.1 == "T1+T2").unwrap();
    assert_eq!(
        saved_percent(
            tokens_saved(TokenUsage::new(11_407, 0), TokenUsage::new(wl2_pair.2, 0)).unwrap()
        ),
        78.6
    );
    pass(1, "metric fixture reproduction");
}

// -------------------------------------------------------------------------
// 2. Pipeline-order conformance under randomized enablement
// -------------------------------------------------------------------------
#[tokio::test(flavor = "multi_thread")]
async fn acceptance_02_pipeline_order_conformance() {
    let assets = PromptAssets::builtin();
    let local = Arc::new(ScriptedBackend::new(
        ScriptedBehavior::new(ScriptedReply::text("a local answer", TokenUsage::new(60, 25)))
            .rule(
                Pattern::ContainsAll(vec![
                    marker(&assets.classifier).to_string(),
                    "quick-ask".to_string(),
                ]),
                ScriptedReply::text("TRIVIAL", TokenUsage::new(40, 1)),
            )
            .rule(
                Pattern::Contains(marker(&assets.classifier).to_string()),
                ScriptedReply::text("COMPLEX", TokenUsage::new(40, 1)),
            )
            .rule(
                Pattern::Contains(marker(&assets.compressor).to_string()),
                ScriptedReply::text("condensed text", TokenUsage::new(200, 20)),
            )
            .rule(
                Pattern::Contains(marker(&assets.hunks).to_string()),
                ScriptedReply::text("2", TokenUsage::new(150, 3)),
            )
            .rule(
                Pattern::Contains(marker(&assets.intent).to_string()),
                ScriptedReply::text("prose, not json", TokenUsage::new(90, 8)),
            ),
    ));
    let cloud = Arc::new(ScriptedBackend::new(
        ScriptedBehavior::new(ScriptedReply::text("cloud result", TokenUsage::new(500, 80))).rule(
            Pattern::Contains(marker(&assets.batch).to_string()),
            ScriptedReply::NumberedEcho { prefix: "ans: ".to_string() },
        ),
    ));
    let mut tactics = TacticConfig::all_disabled();
    tactics.t7.window_ms = 5; // keep the randomized batch waits short
    let dir = tempfile::tempdir().unwrap();
    let clock = ManualClock::new(10_000);
    let pipeline =
        build_pipeline(tactics, local, cloud, clock, dir.path(), "order-conformance").await;

    let mut rng = ChaCha8Rng::seed_from_u64(20_250_809);
    let mut handles = Vec::new();
    for i in 0..1_000 {
        let mut overrides = BTreeMap::new();
        for key in ["t1", "t2", "t3", "t4", "t5", "t6", "t7"] {
            overrides.insert(format!("{key}.enabled"), json!(rng.gen_bool(0.5)));
        }
        let flavor: u8 = rng.gen_range(0..4);
        let text = match flavor {
            0 => format!("quick-ask {i}: what is the default port?"),
            1 => format!(
                "request {i}: please change the handler\n```src/file_{i}.rs\nline one\nline two\nline three\n```"
            ),
            2 => format!("request {i}: {}", "long retrieved change content. ".repeat(80)),
            _ => format!("request {i}: summarize the design"),
        };
        let mut request = ChatRequest::new(
            vec![Message::system("shared system rules"), Message::user(text)],
            "order-test",
        );
        request.no_cache = rng.gen_bool(0.2);
        let pipeline = pipeline.clone();
        handles.push(tokio::spawn(async move {
            pipeline.run_with_overrides(request, &overrides).await
        }));
    }

    let order_index = |stage: Stage| PIPELINE_ORDER.iter().position(|s| *s == stage).unwrap();
    for handle in handles {
        let response = handle.await.unwrap().expect("no caller-visible errors");
        let indices: Vec<usize> =
            response.stage_trace.iter().map(|e| order_index(e.stage)).collect();
        assert!(
            indices.windows(2).all(|w| w[0] < w[1]),
            "trace must be a subsequence of the pipeline order: {indices:?}"
        );
        let cloud_events =
            response.stage_trace.iter().filter(|e| e.stage == Stage::Cloud).count();
        assert!(cloud_events <= 1, "at most one cloud event per request");
    }
    pass(2, "pipeline-order conformance over 1000 randomized requests");
}

// -------------------------------------------------------------------------
// 3. Fail-open equivalence with a dead local backend
// -------------------------------------------------------------------------
#[tokio::test(flavor = "multi_thread")]
async fn acceptance_03_fail_open_equivalence() {
    let cloud_script = || {
        Arc::new(ScriptedBackend::new(ScriptedBehavior::new(ScriptedReply::Text {
            content: "deterministic cloud output".to_string(),
            usage: splitter::backends::ScriptedUsage::EstimateInput { output_tokens: 90 },
            delay_ms: 0,
            logprob: None,
        })))
    };
    let request_for = |i: usize| {
        ChatRequest::new(
            vec![
                Message::system(format!("rules for workspace {i}. {}", "convention. ".repeat(60))),
                Message::user(format!("earlier question {i} about the scheduler")),
                Message::assistant(format!("earlier answer {i}")),
                Message::user(format!(
                    "request {i}: please change the timeout. {}",
                    "context paragraph for the request. ".repeat(50)
                )),
            ],
            "failopen",
        )
    };

    let dir = tempfile::tempdir().unwrap();
    let clock = ManualClock::new(5_000);
    let baseline_pipeline = build_pipeline(
        TacticConfig::all_disabled(),
        Arc::new(ScriptedBackend::failing()),
        cloud_script(),
        clock.clone(),
        dir.path(),
        "failopen-baseline",
    )
    .await;
    let mut all_on = TacticConfig::all_enabled();
    all_on.t7.window_ms = 5;
    let treated_pipeline = build_pipeline(
        all_on,
        Arc::new(ScriptedBackend::failing()),
        cloud_script(),
        clock,
        dir.path(),
        "failopen-treated",
    )
    .await;

    for i in 0..100 {
        let baseline = baseline_pipeline.run(request_for(i)).await.expect("baseline never errors");
        let treated = treated_pipeline.run(request_for(i)).await.expect("fail-open never errors");
        assert_eq!(treated.content, baseline.content, "request {i} content must be identical");
        assert_eq!(treated.usage, baseline.usage, "request {i} usage must be identical");
        for stage in [Stage::T1, Stage::T3, Stage::T2, Stage::T6, Stage::T4, Stage::T5] {
            let event = treated.stage_trace.iter().find(|e| e.stage == stage).unwrap();
            assert_eq!(
                event.decision,
                decision::FAILED_OPEN,
                "request {i}: attempted stage {stage:?} must log failed_open"
            );
        }
    }
    pass(3, "fail-open equivalence, 100/100 byte-identical");
}

// -------------------------------------------------------------------------
// 4. Routing short-circuit at a scripted 45% trivial rate
// -------------------------------------------------------------------------
#[tokio::test(flavor = "multi_thread")]
async fn acceptance_04_routing_short_circuit() {
    let assets = PromptAssets::builtin();
    // 20 explanation-style requests; 9 scripted trivial = 45%
    let trivial_ids: BTreeSet<usize> = [0, 2, 4, 6, 8, 10, 12, 14, 16].into_iter().collect();
    let mut behavior =
        ScriptedBehavior::new(ScriptedReply::text("local explanation", TokenUsage::new(50, 30)));
    for i in &trivial_ids {
        behavior = behavior.rule(
            Pattern::ContainsAll(vec![
                marker(&assets.classifier).to_string(),
                format!("sample-{i:02}"),
            ]),
            ScriptedReply::text("TRIVIAL", TokenUsage::new(30, 1)),
        );
    }
    behavior = behavior.rule(
        Pattern::Contains(marker(&assets.classifier).to_string()),
        ScriptedReply::text("COMPLEX", TokenUsage::new(30, 1)),
    );
    let local = Arc::new(ScriptedBackend::new(behavior));
    let cloud = Arc::new(ScriptedBackend::always("cloud explanation", TokenUsage::new(900, 250)));

    let mut tactics = TacticConfig::all_disabled();
    tactics.t1.enabled = true;
    let dir = tempfile::tempdir().unwrap();
    let clock = ManualClock::new(8_000);
    let pipeline = build_pipeline(tactics, local, cloud, clock, dir.path(), "routing").await;

    let mut local_answers = 0usize;
    for i in 0..20 {
        let request = ChatRequest::new(
            vec![Message::user(format!("sample-{i:02}: what does module {i} do?"))],
            "routing",
        );
        let response = pipeline.run(request).await.unwrap();
        if trivial_ids.contains(&i) {
            assert_eq!(response.source, ResponseSource::Local, "sample {i} must short-circuit");
            assert_eq!(response.usage, TokenUsage::ZERO, "sample {i} must cost zero cloud tokens");
            local_answers += 1;
        } else {
            assert_eq!(response.source, ResponseSource::Cloud, "sample {i} must reach the cloud");
        }
    }
    let measured = local_answers as f64 / 20.0;
    assert_eq!(measured, 0.45, "measured local-answer rate must equal 45% exactly");
    pass(4, "routing short-circuit at exactly 45%");
}

// -------------------------------------------------------------------------
// 5. Cache determinism: repeats, namespaces, TTL
// -------------------------------------------------------------------------
#[tokio::test(flavor = "multi_thread")]
async fn acceptance_05_cache_determinism() {
    let local = Arc::new(ScriptedBackend::always("embed host", TokenUsage::ZERO));
    let cloud = Arc::new(ScriptedBackend::always("cached answer", TokenUsage::new(400, 60)));
    let mut tactics = TacticConfig::all_disabled();
    tactics.t3.enabled = true;
    tactics.t3.similarity_threshold = 0.85;
    tactics.t3.ttl_secs = 60;
    let dir = tempfile::tempdir().unwrap();
    let clock = ManualClock::new(1_000_000);
    let pipeline =
        build_pipeline(tactics, local, cloud.clone(), clock.clone(), dir.path(), "cache").await;

    // 50-request log: 40 unique + 10 exact repeats of the first ten
    let mut texts: Vec<String> =
        (0..40).map(|i| format!("unique question {i} about subsystem {}", i * 7 % 13)).collect();
    for i in 0..10 {
        texts.push(format!("unique question {i} about subsystem {}", i * 7 % 13));
    }
    let mut hits = 0usize;
    for text in &texts {
        let response = pipeline
            .run(ChatRequest::new(vec![Message::user(text.clone())], "ws-a"))
            .await
            .unwrap();
        if response.source == ResponseSource::Cache {
            hits += 1;
            assert_eq!(response.usage, TokenUsage::ZERO, "hits contribute zero cloud tokens");
        }
    }
    assert_eq!(hits, 10, "exactly the ten exact repeats hit at threshold 0.85");
    assert_eq!(cloud.chat_calls(), 40, "one cloud call per unique text");

    // zero cross-workspace hits
    for text in texts.iter().take(10) {
        let response = pipeline
            .run(ChatRequest::new(vec![Message::user(text.clone())], "ws-b"))
            .await
            .unwrap();
        assert_eq!(
            response.source,
            ResponseSource::Cloud,
            "workspace b must never see workspace a entries"
        );
    }

    // zero hits after TTL expiry under the controlled clock
    clock.advance_ms(61_000);
    for text in texts.iter().take(10) {
        let response = pipeline
            .run(ChatRequest::new(vec![Message::user(text.clone())], "ws-a"))
            .await
            .unwrap();
        assert_eq!(response.source, ResponseSource::Cloud, "expired entries never hit");
    }
    pass(5, "cache determinism: 10/10 hits, 0 cross-workspace, 0 after TTL");
}

// -------------------------------------------------------------------------
// 6. Batch window behavior: 9 requests -> 2 cloud calls (8+1)
// -------------------------------------------------------------------------
#[tokio::test(flavor = "multi_thread")]
async fn acceptance_06_batch_window_behavior() {
    let assets = PromptAssets::builtin();
    let cloud = Arc::new(ScriptedBackend::new(
        ScriptedBehavior::new(ScriptedReply::NumberedEcho { prefix: "reply to ".to_string() })
            .rule(
                Pattern::Contains(marker(&assets.batch).to_string()),
                ScriptedReply::NumberedEcho { prefix: "reply to ".to_string() },
            ),
    ));
    let local = Arc::new(ScriptedBackend::always("unused", TokenUsage::ZERO));
    let mut tactics = TacticConfig::all_disabled();
    tactics.t7.enabled = true;
    tactics.t7.window_ms = 250;
    tactics.t7.max_batch = 8;
    let dir = tempfile::tempdir().unwrap();
    let clock = ManualClock::new(0);
    let pipeline = build_pipeline(tactics, local, cloud.clone(), clock, dir.path(), "batch").await;

    let mut handles = Vec::new();
    for i in 0..9 {
        let pipeline = pipeline.clone();
        handles.push(tokio::spawn(async move {
            let request = ChatRequest::new(
                vec![Message::user(format!("bq-{i}: what about topic {i}?"))],
                "batch",
            );
            (i, pipeline.run(request).await.unwrap())
        }));
        // all nine arrive well inside the 250 ms window
        tokio::time::sleep(std::time::Duration::from_millis(2)).await;
    }
    let mut batched = 0usize;
    let mut singleton = 0usize;
    for handle in handles {
        let (i, response) = handle.await.unwrap();
        assert!(
            response.content.contains(&format!("bq-{i}:")),
            "member {i} must receive its own segment, got {:?}",
            response.content
        );
        let t7 = response.stage_trace.iter().find(|e| e.stage == Stage::T7).unwrap();
        match t7.decision.as_str() {
            decision::BATCHED => batched += 1,
            decision::SINGLETON => singleton += 1,
            other => panic!("unexpected t7 decision {other}"),
        }
    }
    assert_eq!(cloud.chat_calls(), 2, "exactly two cloud calls: the 8-batch and the overflow");
    assert_eq!(batched, 8);
    assert_eq!(singleton, 1);
    pass(6, "batch window: 9 requests -> 2 cloud calls, segments delivered");
}

// -------------------------------------------------------------------------
// 7. T4 input amplification + approval replacement
// -------------------------------------------------------------------------
#[tokio::test(flavor = "multi_thread")]
async fn acceptance_07_draft_review_amplification() {
    let assets = PromptAssets::builtin();
    // amplification property across varied scripted requests
    let local = ScriptedBackend::always(
        "a non-empty draft body with enough words to matter",
        TokenUsage::new(80, 30),
    );
    for i in 0..25 {
        let request = ChatRequest::new(
            vec![
                Message::system(format!("system rules {i}")),
                Message::user(format!("request {i}: {}", "payload ".repeat(i + 1))),
            ],
            "draft",
        );
        let outcome = draft::prepare_review(&request, &local, &assets).await.unwrap().unwrap();
        assert!(
            outcome.request.estimated_tokens() > request.estimated_tokens(),
            "request {i}: review input must strictly exceed the original"
        );
    }

    // approval end-to-end: final content equals the draft
    let cloud = Arc::new(ScriptedBackend::new(
        ScriptedBehavior::new(ScriptedReply::text("never from scratch", TokenUsage::new(1, 1)))
            .rule(
                Pattern::Contains(marker(&assets.reviewer).to_string()),
                ScriptedReply::text(draft::APPROVAL_SENTINEL, TokenUsage::new(500, 4)),
            ),
    ));
    let mut tactics = TacticConfig::all_disabled();
    tactics.t4.enabled = true;
    let dir = tempfile::tempdir().unwrap();
    let clock = ManualClock::new(0);
    let pipeline = build_pipeline(
        tactics,
        Arc::new(ScriptedBackend::always("the exact draft", TokenUsage::new(40, 20))),
        cloud,
        clock,
        dir.path(),
        "draft",
    )
    .await;
    let response = pipeline
        .run(ChatRequest::new(vec![Message::user("write it".to_string())], "draft"))
        .await
        .unwrap();
    assert_eq!(response.content, "the exact draft");
    pass(7, "draft-review amplification and approval replacement");
}

// -------------------------------------------------------------------------
// 8. T6 safety: malformed extractor output is 100% passthrough
// -------------------------------------------------------------------------
#[tokio::test(flavor = "multi_thread")]
async fn acceptance_08_intent_extraction_safety() {
    let assets = PromptAssets::builtin();
    for bad_output in [
        "I think the intent is to explain the parser.",
        "```json\n{\"intent\":\"explain\",\"target\":\"x\",\"constraints\":[]}\n```",
    ] {
        let local = Arc::new(ScriptedBackend::new(
            ScriptedBehavior::new(ScriptedReply::text("unused", TokenUsage::ZERO)).rule(
                Pattern::Contains(marker(&assets.intent).to_string()),
                ScriptedReply::text(bad_output, TokenUsage::new(70, 25)),
            ),
        ));
        let cloud = Arc::new(ScriptedBackend::always("cloud saw it", TokenUsage::new(300, 40)));
        let mut tactics = TacticConfig::all_disabled();
        tactics.t6.enabled = true;
        let dir = tempfile::tempdir().unwrap();
        let clock = ManualClock::new(0);
        let pipeline = build_pipeline(tactics, local, cloud, clock, dir.path(), "intent").await;
        for i in 0..50 {
            let original = format!("could you possibly explain module {i} for me?");
            let response = pipeline
                .run(ChatRequest::new(vec![Message::user(original)], "intent"))
                .await
                .expect("the failure is safe: zero errors");
            let t6 = response.stage_trace.iter().find(|e| e.stage == Stage::T6).unwrap();
            assert_eq!(t6.decision, decision::PASSTHROUGH, "zero rewritten prompts");
            assert_eq!(t6.tokens_in, t6.tokens_out, "request estimate unchanged");
        }
    }
    pass(8, "intent extraction safety: 100% passthrough on malformed output");
}

// -------------------------------------------------------------------------
// 9. Greedy-additive vs brute-force oracle on a 4-tactic table
// -------------------------------------------------------------------------
struct SyntheticTable;

impl SyntheticTable {
    /// Deterministic synthetic metric with interactions, defined over all
    /// 16 subsets of {T1..T4}.
    fn value(enabled: &BTreeSet<Tactic>) -> f64 {
        let has = |t: Tactic| enabled.contains(&t);
        let mut value = 0.0;
        if has(Tactic::T1) {
            value += 0.30;
        }
        if has(Tactic::T2) {
            value += 0.22;
        }
        if has(Tactic::T3) {
            value += 0.05;
        }
        if has(Tactic::T4) {
            value -= 0.10;
        }
        // interactions: T1+T2 overlap, T3 synergizes with T2, T4 helps T3
        if has(Tactic::T1) && has(Tactic::T2) {
            value -= 0.07;
        }
        if has(Tactic::T2) && has(Tactic::T3) {
            value += 0.09;
        }
        if has(Tactic::T3) && has(Tactic::T4) {
            value += 0.12;
        }
        value
    }
}

#[async_trait::async_trait]
impl SubsetMetric for SyntheticTable {
    async fn saved_fraction(&mut self, enabled: &BTreeSet<Tactic>) -> f64 {
        Self::value(enabled)
    }
}

#[tokio::test]
async fn acceptance_09_greedy_additive_oracle() {
    let tactics = [Tactic::T1, Tactic::T2, Tactic::T3, Tactic::T4];

    // brute-force oracle: independent greedy over the exhaustive table
    let mut oracle_chain: Vec<BTreeSet<Tactic>> = Vec::new();
    let mut current: BTreeSet<Tactic> = BTreeSet::new();
    let mut current_value = f64::NEG_INFINITY;
    loop {
        let mut best: Option<(Tactic, f64)> = None;
        for &tactic in &tactics {
            if current.contains(&tactic) {
                continue;
            }
            let mut candidate = current.clone();
            candidate.insert(tactic);
            let value = SyntheticTable::value(&candidate);
            if best.map(|(_, b)| value > b).unwrap_or(true) {
                best = Some((tactic, value));
            }
        }
        match best {
            Some((tactic, value)) if current.is_empty() || value > current_value => {
                current.insert(tactic);
                current_value = value;
                oracle_chain.push(current.clone());
            }
            _ => break,
        }
    }

    let mut metric = SyntheticTable;
    let chain = greedy_additive(&tactics, 7, &mut metric).await;
    let chain_sets: Vec<BTreeSet<Tactic>> = chain.iter().map(|s| s.enabled.clone()).collect();
    assert_eq!(chain_sets, oracle_chain, "greedy chain must match the brute-force oracle");
    // sanity on the synthetic table: T1 first, then the T2/T3 synergy
    assert_eq!(chain[0].name, "T1");
    pass(9, "greedy-additive chain equals brute-force oracle");
}

// -------------------------------------------------------------------------
// 10. Judge debiasing + verdict-stream fixture tallies
// -------------------------------------------------------------------------
#[tokio::test(flavor = "multi_thread")]
async fn acceptance_10_judge_debiasing() {
    let pairs = |n: usize, tag: &str| -> Vec<OutputPair> {
        (0..n)
            .map(|i| OutputPair {
                id: format!("{tag}-{i}"),
                prompt: format!("question {i}"),
                baseline: format!("{tag}-BASE answer {i}"),
                treatment: format!("{tag}-TREAT answer {i}"),
            })
            .collect()
    };

    // a purely position-biased judge: zero consistent verdicts
    let biased = ScriptedBackend::always("A", TokenUsage::new(5, 1));
    let (_, tallies) = judge_pairs(&pairs(20, "p"), &biased).await;
    assert_eq!(tallies.baseline + tallies.treatment + tallies.tie, 0);
    assert_eq!(tallies.inconsistent, 20);

    // a content-preferring judge: 100% consistent
    let content_judge = ScriptedBackend::new(
        ScriptedBehavior::new(ScriptedReply::text("TIE", TokenUsage::new(5, 1)))
            .rule(
                Pattern::Contains("Answer A:\nc-TREAT".to_string()),
                ScriptedReply::text("A", TokenUsage::new(5, 1)),
            )
            .rule(
                Pattern::Contains("Answer B:\nc-TREAT".to_string()),
                ScriptedReply::text("B", TokenUsage::new(5, 1)),
            ),
    );
    let (_, tallies) = judge_pairs(&pairs(20, "c"), &content_judge).await;
    assert_eq!(tallies.treatment, 20, "all consistent for the treatment");
    assert_eq!(tallies.inconsistent + tallies.errors, 0);

    // the committed verdict-stream fixture: 15 baseline-consistent, 5
    // treatment-consistent, 0 ties, 17 position-biased, 3 errors
    let mut fixture_pairs = Vec::new();
    for i in 0..15 {
        fixture_pairs.push(OutputPair {
            id: format!("basewin-{i}"),
            prompt: format!("q{i}"),
            baseline: format!("BASEWIN answer {i}"),
            treatment: format!("plain answer {i}"),
        });
    }
    for i in 0..5 {
        fixture_pairs.push(OutputPair {
            id: format!("treatwin-{i}"),
            prompt: format!("q{i}"),
            baseline: format!("plain answer {i}"),
            treatment: format!("TREATWIN answer {i}"),
        });
    }
    for i in 0..17 {
        fixture_pairs.push(OutputPair {
            id: format!("positional-{i}"),
            prompt: format!("q{i}"),
            baseline: format!("plain base {i}"),
            treatment: format!("plain treat {i}"),
        });
    }
    for i in 0..3 {
        fixture_pairs.push(OutputPair {
            id: format!("errpair-{i}"),
            prompt: format!("ERRPAIR q{i}"),
            baseline: format!("plain base {i}"),
            treatment: format!("plain treat {i}"),
        });
    }
    assert_eq!(fixture_pairs.len(), 40);
    let fixture_judge = ScriptedBackend::new(
        ScriptedBehavior::new(ScriptedReply::text("A", TokenUsage::new(5, 1)))
            .rule(
                Pattern::Contains("ERRPAIR".to_string()),
                ScriptedReply::text("cannot say, really", TokenUsage::new(5, 4)),
            )
            .rule(
                Pattern::Contains("Answer A:\nBASEWIN".to_string()),
                ScriptedReply::text("A", TokenUsage::new(5, 1)),
            )
            .rule(
                Pattern::Contains("Answer B:\nBASEWIN".to_string()),
                ScriptedReply::text("B", TokenUsage::new(5, 1)),
            )
            .rule(
                Pattern::Contains("Answer A:\nTREATWIN".to_string()),
                ScriptedReply::text("A", TokenUsage::new(5, 1)),
            )
            .rule(
                Pattern::Contains("Answer B:\nTREATWIN".to_string()),
                ScriptedReply::text("B", TokenUsage::new(5, 1)),
            ),
    );
    let (verdicts, tallies) = judge_pairs(&fixture_pairs, &fixture_judge).await;
    assert_eq!(verdicts.len(), 40);
    assert_eq!(
        (tallies.baseline, tallies.treatment, tallies.tie, tallies.inconsistent, tallies.errors),
        (15, 5, 0, 17, 3),
        "fixture tallies must reproduce the verdict stream"
    );
    pass(10, "judge debiasing and verdict-stream tallies {15,5,0,17,3}");
}

// -------------------------------------------------------------------------
// 11. Protocol conformance: HTTP shape + MCP tool surface
// -------------------------------------------------------------------------
#[tokio::test(flavor = "multi_thread")]
async fn acceptance_11_protocol_conformance() {
    let local = Arc::new(ScriptedBackend::always("local", TokenUsage::new(5, 2)));
    let cloud = Arc::new(ScriptedBackend::always("exact cloud content", TokenUsage::new(123, 17)));
    let dir = tempfile::tempdir().unwrap();
    let clock = ManualClock::new(0);
    let pipeline = build_pipeline(
        TacticConfig::all_disabled(),
        local,
        cloud,
        clock,
        dir.path(),
        "protocol",
    )
    .await;

    // HTTP: spin a real loopback server and round-trip the OpenAI shape
    let state = Arc::new(http::HttpState { pipeline: pipeline.clone(), auth_token: None });
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, http::router(state)).await.unwrap();
    });
    let body: Value = reqwest::Client::new()
        .post(format!("http://{addr}/v1/chat/completions"))
        .json(&json!({"messages": [{"role": "user", "content": "fidelity check"}]}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(body.pointer("/choices/0/message/content"), Some(&json!("exact cloud content")));
    assert_eq!(body.pointer("/usage/prompt_tokens"), Some(&json!(123)));
    assert_eq!(body.pointer("/usage/completion_tokens"), Some(&json!(17)));
    let models: Value = reqwest::Client::new()
        .get(format!("http://{addr}/v1/models"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(models.pointer("/data").and_then(Value::as_array).unwrap().len(), 2);

    // MCP: exactly the four tools, each answering per its contract
    let server = McpServer::new(pipeline);
    let listing = server
        .handle_line(&json!({"jsonrpc":"2.0","id":1,"method":"tools/list"}).to_string())
        .await
        .unwrap();
    let listing: Value = serde_json::from_str(&listing).unwrap();
    let names: Vec<&str> = listing
        .pointer("/result/tools")
        .and_then(Value::as_array)
        .unwrap()
        .iter()
        .map(|t| t["name"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        vec!["split.complete", "split.cache_lookup", "split.classify", "split.stats"]
    );
    for (id, name, args, probe) in [
        (2, "split.complete", json!({"prompt": "mcp ask"}), "\"source\":\"cloud\""),
        (3, "split.cache_lookup", json!({"prompt": "mcp ask"}), "\"hit\":false"),
        (4, "split.classify", json!({"prompt": "mcp ask"}), "\"label\":"),
        (5, "split.stats", json!({}), "\"request_count\":"),
    ] {
        let reply = server
            .handle_line(
                &json!({"jsonrpc":"2.0","id":id,"method":"tools/call",
                        "params":{"name":name,"arguments":args}})
                .to_string(),
            )
            .await
            .unwrap();
        let reply: Value = serde_json::from_str(&reply).unwrap();
        assert_eq!(reply["id"], json!(id), "response id must match the request");
        let text = reply
            .pointer("/result/content/0/text")
            .and_then(Value::as_str)
            .unwrap_or_else(|| panic!("{name} must return a tool result"));
        assert!(text.contains(probe), "{name} result {text} missing {probe}");
    }
    pass(11, "protocol conformance for HTTP and MCP surfaces");
}

// -------------------------------------------------------------------------
// 12. End-to-end mock eval: 4 workloads x 9 subsets x 2 passes
// -------------------------------------------------------------------------
#[tokio::test(flavor = "multi_thread")]
async fn acceptance_12_end_to_end_mock_eval() {
    let started = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let workloads = builtin_workloads();
    let subsets = splitter::eval::subsets::preset("core").unwrap();
    assert_eq!(subsets.len(), 9);
    let options = EvalOptions::scripted(dir.path().to_path_buf(), subsets);
    let report = run_eval(&workloads, &options).await.unwrap();

    assert_eq!(report.results.len(), 72, "4 workloads x 9 subsets x 2 passes");
    assert!(std::fs::metadata(&report.csv_path).unwrap().len() > 0);
    assert!(std::fs::metadata(&report.summary_path).unwrap().len() > 0);
    assert_eq!(report.figure_paths.len(), 3);
    for path in &report.figure_paths {
        assert!(std::fs::metadata(path).unwrap().len() > 0, "{path:?} must be non-empty");
    }

    // deterministic across passes
    for result in &report.results {
        assert!(!result.failed, "{}/{} must not fail", result.workload.as_str(), result.subset);
        let twin = report
            .results
            .iter()
            .find(|r| {
                r.workload == result.workload
                    && r.subset == result.subset
                    && r.pass_index != result.pass_index
            })
            .expect("every cell has a twin in the other pass");
        assert_eq!(twin.cloud_usage, result.cloud_usage);
        assert_eq!(twin.local_usage, result.local_usage);
        assert_eq!(twin.saved_fraction, result.saved_fraction);
        assert_eq!(twin.latency_median_ms, result.latency_median_ms);
    }

    // every saved_fraction reconciles from raw telemetry to 1e-9
    for result in &report.results {
        let recomputed = reconcile_saved_fraction(result).unwrap();
        assert!(
            (recomputed - result.saved_fraction).abs() < 1e-9,
            "{}/{} pass {}: stored {} vs recomputed {}",
            result.workload.as_str(),
            result.subset,
            result.pass_index,
            result.saved_fraction,
            recomputed
        );
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 120, "full mock eval must finish in under 2 minutes");
    pass(12, "end-to-end mock eval: 72 runs, artifacts emitted, reconciled");
}
