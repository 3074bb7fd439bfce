//! Tactic-subset enumeration (singletons, interacting pairs, full set) and
//! the greedy-additive chain.

use std::collections::{BTreeSet, HashSet};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TacticConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tactic {
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
    T7,
}

impl Tactic {
    pub const ALL: [Tactic; 7] =
        [Tactic::T1, Tactic::T2, Tactic::T3, Tactic::T4, Tactic::T5, Tactic::T6, Tactic::T7];

    pub fn as_str(&self) -> &'static str {
        match self {
            Tactic::T1 => "T1",
            Tactic::T2 => "T2",
            Tactic::T3 => "T3",
            Tactic::T4 => "T4",
            Tactic::T5 => "T5",
            Tactic::T6 => "T6",
            Tactic::T7 => "T7",
        }
    }

    pub fn parse(text: &str) -> Option<Tactic> {
        match text.trim().to_ascii_uppercase().as_str() {
            "T1" => Some(Tactic::T1),
            "T2" => Some(Tactic::T2),
            "T3" => Some(Tactic::T3),
            "T4" => Some(Tactic::T4),
            "T5" => Some(Tactic::T5),
            "T6" => Some(Tactic::T6),
            "T7" => Some(Tactic::T7),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SubsetError {
    #[error("duplicate subset name: {0}")]
    DuplicateName(String),
    #[error("unknown tactic in subset list: {0}")]
    UnknownTactic(String),
}

/// A named set of enabled tactics — one run configuration in the matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub name: String,
    pub enabled: BTreeSet<Tactic>,
}

impl SubsetSpec {
    pub fn baseline() -> Self {
        Self { name: "baseline".to_string(), enabled: BTreeSet::new() }
    }

    /// Canonical name: tactics joined with `+` in index order.
    pub fn of(enabled: BTreeSet<Tactic>) -> Self {
        let name = if enabled.is_empty() {
            "baseline".to_string()
        } else {
            enabled.iter().map(Tactic::as_str).collect::<Vec<_>>().join("+")
        };
        Self { name, enabled }
    }

    pub fn full() -> Self {
        Self::of(Tactic::ALL.into_iter().collect())
    }

    pub fn is_baseline(&self) -> bool {
        self.enabled.is_empty()
    }

    /// Enablement flags applied over shared tactic parameters.
    pub fn apply(&self, base: &TacticConfig) -> TacticConfig {
        let mut cfg = base.clone();
        cfg.t1.enabled = self.enabled.contains(&Tactic::T1);
        cfg.t2.enabled = self.enabled.contains(&Tactic::T2);
        cfg.t3.enabled = self.enabled.contains(&Tactic::T3);
        cfg.t4.enabled = self.enabled.contains(&Tactic::T4);
        cfg.t5.enabled = self.enabled.contains(&Tactic::T5);
        cfg.t6.enabled = self.enabled.contains(&Tactic::T6);
        cfg.t7.enabled = self.enabled.contains(&Tactic::T7);
        cfg
    }
}

/// Enumerate the structured sample of the 2^7 subset space: the seven
/// singletons, the configured interacting pairs, and optionally the full
/// set. Duplicate names are rejected.
pub fn gen_subsets(
    singletons: bool,
    pairs: &[BTreeSet<Tactic>],
    include_full: bool,
) -> Result<Vec<SubsetSpec>, SubsetError> {
    let mut specs = Vec::new();
    if singletons {
        for tactic in Tactic::ALL {
            specs.push(SubsetSpec::of(BTreeSet::from([tactic])));
        }
    }
    for pair in pairs {
        specs.push(SubsetSpec::of(pair.clone()));
    }
    if include_full {
        specs.push(SubsetSpec::full());
    }
    let mut seen = HashSet::new();
    for spec in &specs {
        if !seen.insert(spec.name.clone()) {
            return Err(SubsetError::DuplicateName(spec.name.clone()));
        }
    }
    Ok(specs)
}

/// The default interacting-pair list: T1+T2, T1+T3, and T1+T2+T3.
pub fn default_pairs() -> Vec<BTreeSet<Tactic>> {
    vec![
        BTreeSet::from([Tactic::T1, Tactic::T2]),
        BTreeSet::from([Tactic::T1, Tactic::T3]),
        BTreeSet::from([Tactic::T1, Tactic::T2, Tactic::T3]),
    ]
}

/// Named presets for the CLI: `core` = baseline + singletons + full
/// (9 subsets); `pairs` adds the interacting pairs (12 subsets).
pub fn preset(name: &str) -> Option<Vec<SubsetSpec>> {
    let mut specs = vec![SubsetSpec::baseline()];
    match name {
        "core" => {
            specs.extend(gen_subsets(true, &[], true).expect("static preset"));
            Some(specs)
        }
        "pairs" => {
            specs.extend(gen_subsets(true, &default_pairs(), true).expect("static preset"));
            Some(specs)
        }
        _ => None,
    }
}

/// Parse a CLI subset list: comma-separated entries, each `baseline`,
/// `all`, or a `+`-joined tactic set (e.g. `T1+T3`).
pub fn parse_subset_list(text: &str) -> Result<Vec<SubsetSpec>, SubsetError> {
    let mut specs = Vec::new();
    for entry in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if entry.eq_ignore_ascii_case("baseline") {
            specs.push(SubsetSpec::baseline());
            continue;
        }
        if entry.eq_ignore_ascii_case("all") {
            specs.push(SubsetSpec::full());
            continue;
        }
        let mut set = BTreeSet::new();
        for part in entry.split('+') {
            let tactic =
                Tactic::parse(part).ok_or_else(|| SubsetError::UnknownTactic(part.to_string()))?;
            set.insert(tactic);
        }
        specs.push(SubsetSpec::of(set));
    }
    let mut seen = HashSet::new();
    for spec in &specs {
        if !seen.insert(spec.name.clone()) {
            return Err(SubsetError::DuplicateName(spec.name.clone()));
        }
    }
    Ok(specs)
}

/// Measurement source for the greedy chain. The harness implementation
/// runs (and memoizes) real eval cells; tests plug in synthetic tables.
#[async_trait]
pub trait SubsetMetric: Send {
    async fn saved_fraction(&mut self, enabled: &BTreeSet<Tactic>) -> f64;
}

/// Greedy-additive chain: start from the best singleton, then repeatedly
/// add the tactic that most improves the saved fraction. Stops at `max_len`
/// or when no addition strictly improves the metric; ties break toward the
/// lowest tactic index. Missing measurements are requested from `metric`,
/// never guessed.
pub async fn greedy_additive(
    tactics: &[Tactic],
    max_len: usize,
    metric: &mut dyn SubsetMetric,
) -> Vec<SubsetSpec> {
    if tactics.is_empty() || max_len == 0 {
        return Vec::new();
    }
    let mut best_tactic = tactics[0];
    let mut best_value = f64::NEG_INFINITY;
    for &tactic in tactics {
        let value = metric.saved_fraction(&BTreeSet::from([tactic])).await;
        if value > best_value {
            best_value = value;
            best_tactic = tactic;
        }
    }
    let mut current: BTreeSet<Tactic> = BTreeSet::from([best_tactic]);
    let mut current_value = best_value;
    let mut chain = vec![SubsetSpec::of(current.clone())];

    while chain.len() < max_len {
        let mut step_best: Option<(Tactic, f64)> = None;
        for &tactic in tactics {
            if current.contains(&tactic) {
                continue;
            }
            let mut candidate = current.clone();
            candidate.insert(tactic);
            let value = metric.saved_fraction(&candidate).await;
            let better = match step_best {
                None => true,
                Some((_, best)) => value > best,
            };
            if better {
                step_best = Some((tactic, value));
            }
        }
        match step_best {
            Some((tactic, value)) if value > current_value => {
                current.insert(tactic);
                current_value = value;
                chain.push(SubsetSpec::of(current.clone()));
            }
            _ => break,
        }
    }
    chain
}
