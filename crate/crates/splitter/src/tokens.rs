//! Token counting, savings fractions, and dollar-cost arithmetic.
//!
//! All reported metrics use backend-returned usage; the character-based
//! estimator exists only for pre-call transform decisions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::TokenUsage;

#[derive(Debug, Error, PartialEq)]
pub enum AccountingError {
    #[error("baseline usage total is zero; savings fraction is undefined")]
    ZeroBaseline,
    #[error("cached input tokens ({cached}) exceed input tokens ({input})")]
    CachedExceedsInput { cached: u64, input: u64 },
}

/// Per-million-token prices for a cloud endpoint.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateCard {
    pub input_price_per_million: f64,
    pub output_price_per_million: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cached_input_price_per_million: Option<f64>,
}

impl Default for RateCard {
    /// gpt-4o-mini prices, the proxy card used for cost reporting.
    fn default() -> Self {
        Self {
            input_price_per_million: 0.15,
            output_price_per_million: 0.60,
            cached_input_price_per_million: Some(0.075),
        }
    }
}

impl RateCard {
    pub fn validate(&self) -> Result<(), String> {
        let cached = self.cached_input_price_per_million.unwrap_or(0.0);
        if self.input_price_per_million < 0.0
            || self.output_price_per_million < 0.0
            || cached < 0.0
        {
            return Err("rate card prices must be >= 0".to_string());
        }
        Ok(())
    }
}

/// Token count for `text`.
///
/// When the backend already reported usage, that count wins. Otherwise this
/// falls back to the deterministic estimate `ceil(chars / 4)` — good enough
/// for the pre-call shrink/no-shrink decisions the transforms make.
pub fn count_tokens(text: &str, usage_hint: Option<TokenUsage>) -> u64 {
    if let Some(usage) = usage_hint {
        return usage.total();
    }
    let chars = text.chars().count() as u64;
    chars.div_ceil(4)
}

/// Fraction of cloud tokens saved: `(baseline - treatment) / baseline` over
/// total tokens (input + output). Negative when the treatment used more.
pub fn tokens_saved(baseline: TokenUsage, treatment: TokenUsage) -> Result<f64, AccountingError> {
    let base = baseline.total();
    if base == 0 {
        return Err(AccountingError::ZeroBaseline);
    }
    Ok(1.0 - treatment.total() as f64 / base as f64)
}

/// Savings fraction as a percent rounded to one decimal place, the form used
/// in every report.
pub fn saved_percent(fraction: f64) -> f64 {
    (fraction * 1000.0).round() / 10.0
}

/// Dollar cost of `usage` under `rates`, with `cached_input_tokens` of the
/// input billed at the cached rate (falls back to the full input rate when
/// the card has no cached price).
pub fn cost(
    usage: TokenUsage,
    rates: &RateCard,
    cached_input_tokens: u64,
) -> Result<f64, AccountingError> {
    if cached_input_tokens > usage.input_tokens {
        return Err(AccountingError::CachedExceedsInput {
            cached: cached_input_tokens,
            input: usage.input_tokens,
        });
    }
    let cached_rate = rates
        .cached_input_price_per_million
        .unwrap_or(rates.input_price_per_million);
    let fresh = (usage.input_tokens - cached_input_tokens) as f64;
    let cached = cached_input_tokens as f64;
    let output = usage.output_tokens as f64;
    Ok(fresh * rates.input_price_per_million / 1e6
        + cached * cached_rate / 1e6
        + output * rates.output_price_per_million / 1e6)
}
