//! Scripted backend suites for mock evaluation runs. Everything is a pure
//! function of (workload, request text), so two identical passes produce
//! identical telemetry.

use std::sync::Arc;

use crate::backends::{Pattern, ScriptedBackend, ScriptedBehavior, ScriptedReply, ScriptedUsage};
use crate::tactics::prompts::{marker, PromptAssets};
use crate::types::TokenUsage;

use super::workload::{WorkloadClass, WorkloadSample};

pub struct EvalMocks {
    pub local: Arc<ScriptedBackend>,
    pub cloud: Arc<ScriptedBackend>,
    pub embedding: Arc<ScriptedBackend>,
}

/// Canned cloud output sizes per class, inside each class's stated range.
fn cloud_output_tokens(class: WorkloadClass) -> u64 {
    match class {
        WorkloadClass::Wl1Edit => 600,
        WorkloadClass::Wl2Explain => 1_200,
        WorkloadClass::Wl3Chat => 400,
        WorkloadClass::Wl4Rag => 450,
    }
}

/// The deterministic local backend: routes gold-trivial samples to
/// TRIVIAL, compresses to a fixed short text, identifies fixed change
/// sites, and answers intent extraction with prose (which safely falls
/// through, as small local models tend to).
pub fn scripted_local(samples: &[WorkloadSample], assets: &PromptAssets) -> Arc<ScriptedBackend> {
    let classify = marker(&assets.classifier).to_string();
    let compressor = marker(&assets.compressor).to_string();
    let hunks = marker(&assets.hunks).to_string();
    let intent = marker(&assets.intent).to_string();

    let mut behavior = ScriptedBehavior::new(ScriptedReply::text(
        "Here is a concise local answer covering the request, produced by the small model.",
        TokenUsage::new(350, 140),
    ));
    for sample in samples {
        if sample.is_trivial_gold == Some(true) {
            behavior = behavior.rule(
                Pattern::ContainsAll(vec![classify.clone(), sample.id.clone()]),
                ScriptedReply::text("TRIVIAL", TokenUsage::new(320, 1)).with_logprob((0.92f64).ln()),
            );
        }
    }
    behavior = behavior
        .rule(
            Pattern::Contains(classify),
            ScriptedReply::text("COMPLEX", TokenUsage::new(320, 1)).with_logprob((0.88f64).ln()),
        )
        .rule(
            Pattern::Contains(compressor),
            ScriptedReply::text(
                "Condensed: project rules apply; preserve paths, names, errors, numbers.",
                TokenUsage::new(640, 70),
            ),
        )
        .rule(Pattern::Contains(hunks), ScriptedReply::text("6, 18", TokenUsage::new(700, 5)))
        .rule(
            Pattern::Contains(intent),
            ScriptedReply::text(
                "The user seems to want some kind of explanation, I think.",
                TokenUsage::new(260, 18),
            ),
        );
    Arc::new(ScriptedBackend::new(behavior).with_model_name("scripted-local-3b"))
}

/// The deterministic cloud backend: input usage estimated from the actual
/// outbound request (so transforms show up in usage), canned output size
/// per class. Approves the review draft for two samples per workload;
/// corrects the rest.
pub fn scripted_cloud(
    class: WorkloadClass,
    samples: &[WorkloadSample],
    assets: &PromptAssets,
) -> Arc<ScriptedBackend> {
    let reviewer = marker(&assets.reviewer).to_string();
    let batch = marker(&assets.batch).to_string();
    let output_tokens = cloud_output_tokens(class);

    let mut behavior = ScriptedBehavior::new(ScriptedReply::Text {
        content: format!(
            "Cloud answer for a {} request: a thorough response with the requested detail.",
            class.as_str()
        ),
        usage: ScriptedUsage::EstimateInput { output_tokens },
        delay_ms: 0,
        logprob: None,
    });
    for sample in samples.iter().take(2) {
        behavior = behavior.rule(
            Pattern::ContainsAll(vec![reviewer.clone(), sample.id.clone()]),
            ScriptedReply::Text {
                content: crate::tactics::draft::APPROVAL_SENTINEL.to_string(),
                usage: ScriptedUsage::EstimateInput { output_tokens: 4 },
                delay_ms: 0,
                logprob: None,
            },
        );
    }
    behavior = behavior
        .rule(
            Pattern::Contains(reviewer),
            ScriptedReply::Text {
                content: "Reviewed: the draft needed corrections; here is the fixed answer."
                    .to_string(),
                usage: ScriptedUsage::EstimateInput { output_tokens: output_tokens / 2 },
                delay_ms: 0,
                logprob: None,
            },
        )
        .rule(Pattern::Contains(batch), ScriptedReply::NumberedEcho { prefix: "cloud: ".to_string() })
        .rule(
            Pattern::Contains(marker(crate::eval::judge::JUDGE_PROMPT).to_string()),
            ScriptedReply::text("TIE", TokenUsage::new(400, 1)),
        );
    Arc::new(ScriptedBackend::new(behavior).with_model_name("scripted-cloud-4b"))
}

pub fn scripted_embedding() -> Arc<ScriptedBackend> {
    Arc::new(
        ScriptedBackend::always("n/a", TokenUsage::ZERO)
            .with_model_name("scripted-embed")
            .with_embed_dim(64),
    )
}

/// The full mock suite for one workload cell.
pub fn build_for(
    class: WorkloadClass,
    samples: &[WorkloadSample],
    assets: &PromptAssets,
) -> EvalMocks {
    EvalMocks {
        local: scripted_local(samples, assets),
        cloud: scripted_cloud(class, samples, assets),
        embedding: scripted_embedding(),
    }
}
