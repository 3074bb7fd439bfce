//! Per-tactic secondary metrics recomputed from run telemetry, plus
//! nearest-rank latency percentiles. A metric whose tactic never ran is
//! absent from the map, never zero.

use std::collections::{BTreeMap, BTreeSet};

use crate::telemetry::{decision, Stage, StageEvent};

use super::workload::WorkloadSample;

/// Nearest-rank percentile over unsorted values: rank = ceil(p/100 * n),
/// 1-based.
pub fn nearest_rank(values: &[u64], percentile: f64) -> u64 {
    if values.is_empty() {
        return 0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let rank = ((percentile / 100.0) * n).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Per-request latency: the sum of stage latencies in its trace.
pub fn request_latencies(events: &[StageEvent]) -> Vec<u64> {
    let mut by_request: BTreeMap<&str, u64> = BTreeMap::new();
    for event in events {
        *by_request.entry(event.request_id.as_str()).or_default() += event.latency_ms;
    }
    by_request.into_values().collect()
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Recompute the seven per-tactic metrics from a run's events and the
/// workload's gold labels.
pub fn secondary_metrics(
    events: &[StageEvent],
    samples: &[WorkloadSample],
    max_batch: usize,
) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    let gold_trivial: BTreeMap<&str, bool> = samples
        .iter()
        .filter_map(|s| s.is_trivial_gold.map(|g| (s.id.as_str(), g)))
        .collect();
    let gold_intent: BTreeMap<&str, &str> = samples
        .iter()
        .filter_map(|s| s.intent_gold.as_deref().map(|g| (s.id.as_str(), g)))
        .collect();

    // T1 routing accuracy vs is_trivial_gold
    let mut routing_total = 0u64;
    let mut routing_correct = 0u64;
    // T2 compression ratio (compressed/original estimated tokens)
    let mut compression_ratios = Vec::new();
    // T3 hit rate
    let mut lookups = 0u64;
    let mut hits = 0u64;
    // T4 acceptance
    let mut drafts = 0u64;
    let mut approvals = 0u64;
    // T5 shrink factor (original/extracted)
    let mut shrink_factors = Vec::new();
    // T6 extraction vs gold intents
    let mut t6_ran_on_gold = false;
    let mut t6_success = 0u64;
    let mut t6_correct = 0u64;
    // T7 fill rate over distinct flushed groups
    let mut group_sizes: BTreeMap<String, u32> = BTreeMap::new();

    for event in events {
        match event.stage {
            Stage::T1 => {
                let decided = match event.decision.as_str() {
                    decision::TRIVIAL => Some(true),
                    decision::COMPLEX => Some(false),
                    _ => None,
                };
                if let (Some(decided), Some(gold)) =
                    (decided, gold_trivial.get(event.request_id.as_str()))
                {
                    routing_total += 1;
                    if decided == *gold {
                        routing_correct += 1;
                    }
                }
            }
            Stage::T2 => match event.decision.as_str() {
                decision::COMPRESSED | decision::PASSTHROUGH if event.tokens_in > 0 => {
                    compression_ratios.push(event.tokens_out as f64 / event.tokens_in as f64);
                }
                _ => {}
            },
            Stage::T3 => match event.decision.as_str() {
                decision::HIT => {
                    lookups += 1;
                    hits += 1;
                }
                decision::MISS => lookups += 1,
                _ => {}
            },
            Stage::T4 => match event.decision.as_str() {
                decision::APPROVED => {
                    drafts += 1;
                    approvals += 1;
                }
                decision::CORRECTED | decision::DRAFTED => drafts += 1,
                _ => {}
            },
            Stage::T5 => {
                if event.decision == decision::EXTRACTED && event.tokens_out > 0 {
                    shrink_factors.push(event.tokens_in as f64 / event.tokens_out as f64);
                }
            }
            Stage::T6 => {
                if let Some(gold) = gold_intent.get(event.request_id.as_str()) {
                    match event.decision.as_str() {
                        decision::REWRITTEN => {
                            t6_ran_on_gold = true;
                            t6_success += 1;
                            if event.detail.as_deref() == Some(*gold) {
                                t6_correct += 1;
                            }
                        }
                        decision::PASSTHROUGH | decision::FAILED_OPEN => t6_ran_on_gold = true,
                        _ => {}
                    }
                }
            }
            Stage::T7 => {
                if let (Some(group), Some(size)) = (&event.batch_group, event.batch_size) {
                    group_sizes.insert(group.clone(), size);
                }
            }
            Stage::Cloud => {}
        }
    }

    if routing_total > 0 {
        out.insert("routing_accuracy".to_string(), routing_correct as f64 / routing_total as f64);
    }
    if let Some(ratio) = mean(&compression_ratios) {
        out.insert("compression_ratio".to_string(), ratio);
    }
    if lookups > 0 {
        out.insert("cache_hit_rate".to_string(), hits as f64 / lookups as f64);
    }
    if drafts > 0 {
        out.insert("draft_acceptance_rate".to_string(), approvals as f64 / drafts as f64);
    }
    if let Some(factor) = mean(&shrink_factors) {
        out.insert("diff_shrink_factor".to_string(), factor);
    }
    if t6_ran_on_gold && !gold_intent.is_empty() {
        let precision =
            if t6_success > 0 { t6_correct as f64 / t6_success as f64 } else { 0.0 };
        let recall = t6_correct as f64 / gold_intent.len() as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        out.insert("intent_f1".to_string(), f1);
    }
    if !group_sizes.is_empty() {
        let fill: f64 = group_sizes.values().map(|s| *s as f64).sum::<f64>()
            / (group_sizes.len() as f64 * max_batch as f64);
        out.insert("batch_fill_rate".to_string(), fill);
    }
    out
}

/// Distinct request ids touched by a run.
pub fn request_ids(events: &[StageEvent]) -> BTreeSet<String> {
    events.iter().map(|e| e.request_id.clone()).collect()
}
