//! The tactic stage functions: T1 route, T2 compress, T4 draft-review,
//! T5 minimal-diff, T6 intent extraction, T7 batch + prefix tagging.
//! (T3, the semantic cache, lives in [`crate::semcache`].)
//!
//! Every tactic is a pure function over (request, config) plus the local
//! backend; any internal error is caught by the pipeline's fail-open guard
//! and leaves the request byte-identical.

pub mod batch;
pub mod compress;
pub mod diff;
pub mod draft;
pub mod intent;
pub mod prompts;
pub mod route;

pub use prompts::PromptAssets;
