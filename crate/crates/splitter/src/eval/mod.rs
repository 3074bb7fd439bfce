//! The evaluation harness: loads committed workloads, enumerates tactic
//! subsets, runs the pipeline per (workload, subset, pass) against scripted
//! or live backends, recomputes every metric from raw telemetry, judges
//! quality pairwise with position debiasing, and emits results CSV +
//! summary + figure data.

pub mod judge;
pub mod metrics;
pub mod mocks;
pub mod outputs;
pub mod runner;
pub mod subsets;
pub mod workload;

pub use judge::{judge_pairs, JudgeTallies, JudgeVerdict, OutputPair, Preference};
pub use metrics::{nearest_rank, secondary_metrics};
pub use runner::{
    reconcile_saved_fraction, run_eval, EvalBackends, EvalOptions, EvalReport, RunResult,
};
pub use subsets::{gen_subsets, greedy_additive, SubsetMetric, SubsetSpec, Tactic};
pub use workload::{load_all, load_workload, WorkloadClass, WorkloadError, WorkloadSample};
