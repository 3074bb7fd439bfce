//! Result artifacts: the per-run results CSV, the pass-averaged summary
//! JSON, and the per-figure tabular data files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::tokens::saved_percent;

use super::runner::RunResult;

const SECONDARY_COLUMNS: [&str; 7] = [
    "routing_accuracy",
    "compression_ratio",
    "cache_hit_rate",
    "draft_acceptance_rate",
    "diff_shrink_factor",
    "intent_f1",
    "batch_fill_rate",
];

/// One row per RunResult (per workload × subset × pass).
pub fn write_results_csv(path: &Path, results: &[RunResult]) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec![
        "workload".to_string(),
        "subset".to_string(),
        "pass".to_string(),
        "cloud_input_tokens".to_string(),
        "cloud_output_tokens".to_string(),
        "local_input_tokens".to_string(),
        "local_output_tokens".to_string(),
        "baseline_cloud_tokens".to_string(),
        "saved_pct".to_string(),
        "cost_usd".to_string(),
        "latency_median_ms".to_string(),
        "latency_p95_ms".to_string(),
        "latency_p99_ms".to_string(),
        "failed".to_string(),
    ];
    header.extend(SECONDARY_COLUMNS.iter().map(|s| s.to_string()));
    writer.write_record(&header)?;
    for result in results {
        let mut row = vec![
            result.workload.as_str().to_string(),
            result.subset.clone(),
            result.pass_index.to_string(),
            result.cloud_usage.input_tokens.to_string(),
            result.cloud_usage.output_tokens.to_string(),
            result.local_usage.input_tokens.to_string(),
            result.local_usage.output_tokens.to_string(),
            result.baseline_cloud_usage.total().to_string(),
            format!("{:.1}", result.saved_pct()),
            format!("{:.6}", result.cost_usd),
            result.latency_median_ms.to_string(),
            result.latency_p95_ms.to_string(),
            result.latency_p99_ms.to_string(),
            result.failed.to_string(),
        ];
        for column in SECONDARY_COLUMNS {
            row.push(
                result
                    .secondary
                    .get(column)
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_default(),
            );
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

type CellKey = (String, String);

fn cells(results: &[RunResult]) -> BTreeMap<CellKey, Vec<&RunResult>> {
    let mut map: BTreeMap<CellKey, Vec<&RunResult>> = BTreeMap::new();
    for result in results {
        map.entry((result.workload.as_str().to_string(), result.subset.clone()))
            .or_default()
            .push(result);
    }
    map
}

fn mean_of<F: Fn(&RunResult) -> f64>(runs: &[&RunResult], f: F) -> f64 {
    if runs.is_empty() {
        return 0.0;
    }
    runs.iter().map(|r| f(r)).sum::<f64>() / runs.len() as f64
}

/// Pass-averaged metrics per (workload, subset), plus run metadata.
pub fn write_summary_json(path: &Path, results: &[RunResult], passes: usize) -> anyhow::Result<()> {
    let mut cell_objects = Vec::new();
    for ((workload, subset), runs) in cells(results) {
        let mean_saved = mean_of(&runs, |r| r.saved_fraction);
        // half-range across passes, the paper-style dispersion measure
        let saved: Vec<f64> = runs.iter().map(|r| r.saved_fraction).collect();
        let half_range = if saved.len() > 1 {
            (saved.iter().cloned().fold(f64::MIN, f64::max)
                - saved.iter().cloned().fold(f64::MAX, f64::min))
                / 2.0
        } else {
            0.0
        };
        cell_objects.push(json!({
            "workload": workload,
            "subset": subset,
            "mean_saved_pct": saved_percent(mean_saved),
            "saved_half_range_pp": saved_percent(half_range),
            "mean_cloud_tokens": mean_of(&runs, |r| r.cloud_usage.total() as f64),
            "mean_local_tokens": mean_of(&runs, |r| r.local_usage.total() as f64),
            "mean_cost_usd": mean_of(&runs, |r| r.cost_usd),
            "mean_latency_median_ms": mean_of(&runs, |r| r.latency_median_ms as f64),
            "failed_passes": runs.iter().filter(|r| r.failed).count(),
            "passes": runs.iter().map(|r| json!({
                "pass": r.pass_index,
                "saved_pct": r.saved_pct(),
                "cloud_tokens": r.cloud_usage.total(),
                "cost_usd": r.cost_usd,
                "secondary": r.secondary,
            })).collect::<Vec<_>>(),
        }));
    }
    let model_versions =
        results.first().map(|r| r.model_versions.clone()).unwrap_or_default();
    let summary = json!({
        "passes": passes,
        "run_count": results.len(),
        "model_versions": model_versions,
        "cells": cell_objects,
    });
    std::fs::write(path, serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

/// Tabular data behind the three figures: singleton savings per workload,
/// combination savings per workload, and the savings-vs-cost scatter.
pub fn write_figure_data(dir: &Path, results: &[RunResult]) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let grouped = cells(results);

    let singleton_path = dir.join("singleton_savings.csv");
    let combo_path = dir.join("combo_savings.csv");
    let cost_path = dir.join("savings_vs_cost.csv");

    let mut singles = csv::Writer::from_path(&singleton_path)?;
    singles.write_record(["workload", "subset", "mean_saved_pct", "half_range_pp"])?;
    let mut combos = csv::Writer::from_path(&combo_path)?;
    combos.write_record(["workload", "subset", "mean_saved_pct", "half_range_pp"])?;
    let mut scatter = csv::Writer::from_path(&cost_path)?;
    scatter.write_record(["workload", "subset", "mean_saved_pct", "mean_cost_usd"])?;

    for ((workload, subset), runs) in &grouped {
        let mean_saved = saved_percent(mean_of(runs, |r| r.saved_fraction));
        let saved: Vec<f64> = runs.iter().map(|r| r.saved_fraction).collect();
        let half_range = if saved.len() > 1 {
            saved_percent(
                (saved.iter().cloned().fold(f64::MIN, f64::max)
                    - saved.iter().cloned().fold(f64::MAX, f64::min))
                    / 2.0,
            )
        } else {
            0.0
        };
        let mean_cost = mean_of(runs, |r| r.cost_usd);
        let tactic_count = runs[0].subset.split('+').count();
        let is_baseline = subset == "baseline";

        if !is_baseline && tactic_count == 1 {
            singles.write_record([
                workload.as_str(),
                subset.as_str(),
                &format!("{mean_saved:.1}"),
                &format!("{half_range:.1}"),
            ])?;
        }
        if !is_baseline && tactic_count > 1 {
            combos.write_record([
                workload.as_str(),
                subset.as_str(),
                &format!("{mean_saved:.1}"),
                &format!("{half_range:.1}"),
            ])?;
        }
        scatter.write_record([
            workload.as_str(),
            subset.as_str(),
            &format!("{mean_saved:.1}"),
            &format!("{mean_cost:.6}"),
        ])?;
    }
    singles.flush()?;
    combos.flush()?;
    scatter.flush()?;
    Ok(vec![singleton_path, combo_path, cost_path])
}
