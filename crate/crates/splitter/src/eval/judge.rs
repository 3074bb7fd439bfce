//! Position-debiased pairwise quality judging: every (baseline, treatment)
//! output pair is judged twice with presentation order swapped, and only
//! consistent verdicts count.

use serde::{Deserialize, Serialize};

use crate::backends::{ChatClient, ChatOptions};
use crate::types::Message;

/// Single-token verdict request; minimizes parse failures with small
/// judge models.
pub const JUDGE_PROMPT: &str = "[splitter:judge v1]\nYou are judging two candidate answers to \
the same request. Reply with exactly one token: A if answer A is better, B if answer B is \
better, or TIE if they are equally good.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preference {
    Baseline,
    Treatment,
    Tie,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub pair_id: String,
    /// Preference from the first pass (baseline shown as A).
    pub first_pass: Option<Preference>,
    /// Preference from the second pass (presentation swapped, un-swapped
    /// back to baseline/treatment terms).
    pub second_pass: Option<Preference>,
    pub consistent: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeTallies {
    pub baseline: u64,
    pub treatment: u64,
    pub tie: u64,
    pub inconsistent: u64,
    pub errors: u64,
}

/// One aligned output pair for a sample id.
#[derive(Debug, Clone)]
pub struct OutputPair {
    pub id: String,
    pub prompt: String,
    pub baseline: String,
    pub treatment: String,
}

fn parse_verdict(raw: &str) -> Option<char> {
    let token: String = raw
        .split_whitespace()
        .next()
        .unwrap_or("")
        .chars()
        .filter(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_uppercase();
    match token.as_str() {
        "A" => Some('A'),
        "B" => Some('B'),
        "TIE" => Some('T'),
        _ => None,
    }
}

/// Map a positional verdict to baseline/treatment terms given which output
/// was shown as A.
fn unswap(verdict: char, baseline_is_a: bool) -> Preference {
    match (verdict, baseline_is_a) {
        ('A', true) | ('B', false) => Preference::Baseline,
        ('A', false) | ('B', true) => Preference::Treatment,
        _ => Preference::Tie,
    }
}

async fn one_pass(
    judge: &dyn ChatClient,
    prompt: &str,
    shown_a: &str,
    shown_b: &str,
) -> Result<Option<char>, String> {
    let user = format!("Request:\n{prompt}\n\nAnswer A:\n{shown_a}\n\nAnswer B:\n{shown_b}");
    let messages = [Message::system(JUDGE_PROMPT.to_string()), Message::user(user)];
    let options = ChatOptions {
        temperature: Some(0.0),
        max_output_tokens: Some(3),
        want_logprobs: false,
        cache_prefix_len: None,
    };
    match judge.chat(&messages, &options).await {
        Ok(outcome) => Ok(parse_verdict(&outcome.content)),
        Err(e) => Err(e.to_string()),
    }
}

/// Judge every pair twice with swapped presentation order and tally the
/// consistent verdicts. Judge failures become error verdicts (counted,
/// excluded from consistency).
pub async fn judge_pairs(
    pairs: &[OutputPair],
    judge: &dyn ChatClient,
) -> (Vec<JudgeVerdict>, JudgeTallies) {
    let mut verdicts = Vec::with_capacity(pairs.len());
    let mut tallies = JudgeTallies::default();

    for pair in pairs {
        let first = one_pass(judge, &pair.prompt, &pair.baseline, &pair.treatment).await;
        let second = one_pass(judge, &pair.prompt, &pair.treatment, &pair.baseline).await;

        let verdict = match (first, second) {
            (Ok(Some(a)), Ok(Some(b))) => {
                let first_pass = unswap(a, true);
                let second_pass = unswap(b, false);
                let consistent = first_pass == second_pass;
                if consistent {
                    match first_pass {
                        Preference::Baseline => tallies.baseline += 1,
                        Preference::Treatment => tallies.treatment += 1,
                        Preference::Tie => tallies.tie += 1,
                    }
                } else {
                    tallies.inconsistent += 1;
                }
                JudgeVerdict {
                    pair_id: pair.id.clone(),
                    first_pass: Some(first_pass),
                    second_pass: Some(second_pass),
                    consistent,
                    error: None,
                }
            }
            (first, second) => {
                tallies.errors += 1;
                let detail = match (&first, &second) {
                    (Err(e), _) | (_, Err(e)) => format!("judge call failed: {e}"),
                    _ => "judge output did not parse".to_string(),
                };
                JudgeVerdict {
                    pair_id: pair.id.clone(),
                    first_pass: first.ok().flatten().map(|c| unswap(c, true)),
                    second_pass: second.ok().flatten().map(|c| unswap(c, false)),
                    consistent: false,
                    error: Some(detail),
                }
            }
        };
        verdicts.push(verdict);
    }
    (verdicts, tallies)
}
