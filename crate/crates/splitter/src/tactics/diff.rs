//! T5 — minimal-diff edits. Detection is deliberately loose (fenced
//! file-content blocks, patch markers, or edit keywords plus a length
//! threshold); on long retrieved-content prompts it over-triggers and acts
//! as opportunistic compression, which is the intended behavior. Extraction
//! keeps only a ±window of lines around each change site the local model
//! identifies.

use crate::backends::{BackendError, ChatClient, ChatOptions};
use crate::types::{ChatRequest, Message, Role, TokenUsage};

use super::prompts::PromptAssets;

const EDIT_KEYWORDS: [&str; 3] = ["fix", "change", "replace"];

/// The minimal window of file lines around one change site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hunk {
    pub file_hint: Option<String>,
    /// 1-based first line of the window.
    pub start_line: usize,
    pub lines: Vec<String>,
}

/// A fenced block whose opening fence carries a non-empty info string
/// (language or path) — the signature of pasted file content.
#[derive(Debug, Clone)]
struct LabeledBlock {
    message_idx: usize,
    label: String,
    /// Line index (within the message) of the opening fence.
    open_line: usize,
    /// Line index of the closing fence.
    close_line: usize,
    content_len: usize,
}

fn labeled_blocks(messages: &[Message]) -> Vec<LabeledBlock> {
    let mut blocks = Vec::new();
    for (message_idx, message) in messages.iter().enumerate() {
        if message.role != Role::User {
            continue;
        }
        let lines: Vec<&str> = message.content.lines().collect();
        let mut cursor = 0;
        while cursor < lines.len() {
            let trimmed = lines[cursor].trim_start();
            if let Some(info) = trimmed.strip_prefix("```") {
                if !info.trim().is_empty() {
                    // labeled opening fence; find the close
                    if let Some(offset) =
                        lines[cursor + 1..].iter().position(|l| l.trim() == "```")
                    {
                        let close = cursor + 1 + offset;
                        let content_len: usize =
                            lines[cursor + 1..close].iter().map(|l| l.len() + 1).sum();
                        blocks.push(LabeledBlock {
                            message_idx,
                            label: info.trim().to_string(),
                            open_line: cursor,
                            close_line: close,
                            content_len,
                        });
                        cursor = close + 1;
                        continue;
                    }
                }
            }
            cursor += 1;
        }
    }
    blocks
}

fn has_patch_markers(text: &str) -> bool {
    let mut minus = false;
    let mut plus = false;
    for line in text.lines() {
        if line.starts_with("@@") {
            return true;
        }
        if line.starts_with("--- ") {
            minus = true;
        }
        if line.starts_with("+++ ") {
            plus = true;
        }
        if minus && plus {
            return true;
        }
    }
    false
}

/// Edit-request detection: a labeled file-content block or patch-style
/// block is present, OR an edit keyword appears (case-insensitively) and
/// the total user text exceeds the length threshold.
pub fn detect(request: &ChatRequest, length_threshold: usize) -> bool {
    if !labeled_blocks(&request.messages).is_empty() {
        return true;
    }
    let user_text: String = request
        .messages
        .iter()
        .filter(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    if has_patch_markers(&user_text) {
        return true;
    }
    let lower = user_text.to_lowercase();
    let has_keyword = EDIT_KEYWORDS.iter().any(|k| lower.contains(k));
    has_keyword && user_text.chars().count() > length_threshold
}

/// Parse the local model's change-site reply: integers in any separator
/// soup, clamped to valid line numbers. `None` when nothing parses.
fn parse_sites(raw: &str, line_count: usize) -> Option<Vec<usize>> {
    let mut sites: Vec<usize> = raw
        .split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .filter_map(|s| s.parse::<usize>().ok())
        .filter(|n| (1..=line_count).contains(n))
        .collect();
    sites.sort_unstable();
    sites.dedup();
    if sites.is_empty() {
        None
    } else {
        Some(sites)
    }
}

/// Build the ±window hunk around one 1-based site.
pub fn window_hunk(
    lines: &[String],
    site: usize,
    window: usize,
    file_hint: Option<String>,
) -> Hunk {
    let start = site.saturating_sub(window).max(1);
    let end = (site + window).min(lines.len());
    Hunk {
        file_hint,
        start_line: start,
        lines: lines[start - 1..end].to_vec(),
    }
}

fn render_hunks(hunks: &[Hunk]) -> String {
    let mut out = String::new();
    for hunk in hunks {
        if !out.is_empty() {
            out.push('\n');
        }
        let end = hunk.start_line + hunk.lines.len().saturating_sub(1);
        out.push_str(&format!("@@ lines {}-{} @@\n", hunk.start_line, end));
        out.push_str(&hunk.lines.join("\n"));
    }
    out
}

#[derive(Debug, Clone)]
pub struct DiffOutcome {
    /// `Some` when the request was shrunk to hunks; `None` passes through
    /// (no document, or the local model identified no site).
    pub request: Option<ChatRequest>,
    pub hunks: Vec<Hunk>,
    pub local_usage: TokenUsage,
    pub local_latency_ms: u64,
}

impl DiffOutcome {
    fn passthrough(local_usage: TokenUsage, local_latency_ms: u64) -> Self {
        Self { request: None, hunks: Vec::new(), local_usage, local_latency_ms }
    }
}

/// Ask the local model for change sites and shrink the request to hunks.
/// Targets the largest labeled block; without one (keyword-triggered), the
/// longest user message is treated as the document.
pub async fn extract(
    request: &ChatRequest,
    local: &dyn ChatClient,
    assets: &PromptAssets,
    window_lines: usize,
) -> Result<DiffOutcome, BackendError> {
    let blocks = labeled_blocks(&request.messages);
    let target_block = blocks.into_iter().max_by_key(|b| b.content_len);

    let (message_idx, doc_lines, file_hint): (usize, Vec<String>, Option<String>) =
        match &target_block {
            Some(block) => {
                let content = &request.messages[block.message_idx].content;
                let lines: Vec<String> = content
                    .lines()
                    .skip(block.open_line + 1)
                    .take(block.close_line - block.open_line - 1)
                    .map(str::to_string)
                    .collect();
                (block.message_idx, lines, Some(block.label.clone()))
            }
            None => {
                let (idx, message) = request
                    .messages
                    .iter()
                    .enumerate()
                    .filter(|(_, m)| m.role == Role::User)
                    .max_by_key(|(_, m)| m.content.len())
                    .ok_or_else(|| {
                        BackendError::Unsupported("no user message to extract from".into())
                    })?;
                (idx, message.content.lines().map(str::to_string).collect(), None)
            }
        };

    if doc_lines.is_empty() {
        return Ok(DiffOutcome::passthrough(TokenUsage::ZERO, 0));
    }

    let prompt = [
        Message::system(assets.hunks.clone()),
        Message::user(request.content_text()),
    ];
    let outcome = local.chat(&prompt, &ChatOptions::deterministic()).await?;
    let sites = match parse_sites(&outcome.content, doc_lines.len()) {
        Some(sites) => sites,
        None => return Ok(DiffOutcome::passthrough(outcome.usage, outcome.latency_ms)),
    };

    let hunks: Vec<Hunk> = sites
        .iter()
        .map(|&site| window_hunk(&doc_lines, site, window_lines, file_hint.clone()))
        .collect();
    let rendered = render_hunks(&hunks);

    let mut result = request.clone();
    match target_block {
        Some(block) => {
            let original = &request.messages[block.message_idx].content;
            let lines: Vec<&str> = original.lines().collect();
            let mut rebuilt = Vec::new();
            rebuilt.extend(lines[..=block.open_line].iter().map(|s| s.to_string()));
            rebuilt.push(rendered);
            rebuilt.extend(lines[block.close_line..].iter().map(|s| s.to_string()));
            result.messages[block.message_idx].content = rebuilt.join("\n");
        }
        None => {
            result.messages[message_idx].content = rendered;
        }
    }

    Ok(DiffOutcome {
        request: Some(result),
        hunks,
        local_usage: outcome.usage,
        local_latency_ms: outcome.latency_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Pattern, ScriptedBackend, ScriptedBehavior, ScriptedReply};
    use proptest::prelude::*;

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new(vec![Message::user(text)], "default")
    }

    #[test]
    fn short_keyword_request_does_not_trigger() {
        assert!(!detect(&req("please fix the typo"), 1500));
    }

    #[test]
    fn labeled_fenced_block_triggers() {
        let text = "apply this edit\n```src/lib.rs\nfn main() {}\n```";
        assert!(detect(&req(text), 1500));
    }

    #[test]
    fn unlabeled_fence_does_not_count_as_file_content() {
        let text = "just formatting\n```\nsome text\n```";
        assert!(!detect(&req(text), 1500));
    }

    #[test]
    fn long_retrieved_document_with_keyword_over_triggers() {
        // the over-trigger on retrieved content is normative
        let text = format!(
            "these release notes describe a change in the API\n{}",
            "retrieved paragraph about deployments. ".repeat(300)
        );
        assert!(text.len() > 10_000);
        assert!(detect(&req(&text), 1500));
    }

    #[test]
    fn patch_markers_trigger() {
        let text = "--- a/x.py\n+++ b/x.py\ncontext";
        assert!(detect(&req(text), 1500));
        assert!(detect(&req("@@ -1,3 +1,3 @@\nbody"), 1500));
    }

    #[test]
    fn window_covers_three_lines_each_side() {
        let lines: Vec<String> = (1..=200).map(|i| format!("line {i}")).collect();
        let hunk = window_hunk(&lines, 100, 3, None);
        assert_eq!(hunk.start_line, 97);
        assert_eq!(hunk.lines.len(), 7);
        assert_eq!(hunk.lines.first().unwrap(), "line 97");
        assert_eq!(hunk.lines.last().unwrap(), "line 103");
    }

    #[test]
    fn window_zero_is_exactly_the_site_line() {
        let lines: Vec<String> = (1..=10).map(|i| format!("line {i}")).collect();
        let hunk = window_hunk(&lines, 5, 0, None);
        assert_eq!(hunk.lines, vec!["line 5".to_string()]);
        assert_eq!(hunk.start_line, 5);
    }

    #[test]
    fn window_clamps_at_file_edges() {
        let lines: Vec<String> = (1..=10).map(|i| format!("line {i}")).collect();
        let top = window_hunk(&lines, 1, 3, None);
        assert_eq!(top.start_line, 1);
        assert_eq!(top.lines.len(), 4);
        let bottom = window_hunk(&lines, 10, 3, None);
        assert_eq!(bottom.start_line, 7);
        assert_eq!(bottom.lines.len(), 4);
    }

    fn sites_mock(reply: &str) -> ScriptedBackend {
        let behavior = ScriptedBehavior::new(ScriptedReply::text("unused", TokenUsage::ZERO))
            .rule(
                Pattern::Contains("[splitter:hunks v1]".to_string()),
                ScriptedReply::text(reply, TokenUsage::new(300, 4)),
            );
        ScriptedBackend::new(behavior)
    }

    fn file_request(line_count: usize) -> ChatRequest {
        let body: Vec<String> = (1..=line_count).map(|i| format!("let value_{i} = {i};")).collect();
        req(&format!(
            "change the hundredth assignment\n```src/values.rs\n{}\n```",
            body.join("\n")
        ))
    }

    #[tokio::test]
    async fn extract_replaces_file_content_with_hunks() {
        let mock = sites_mock("100");
        let assets = PromptAssets::builtin();
        let request = file_request(200);
        let outcome = extract(&request, &mock, &assets, 3).await.unwrap();
        let transformed = outcome.request.expect("sites found");
        assert_eq!(outcome.hunks.len(), 1);
        assert_eq!(outcome.hunks[0].start_line, 97);
        assert_eq!(outcome.hunks[0].lines.len(), 7);
        let content = &transformed.messages[0].content;
        assert!(content.contains("@@ lines 97-103 @@"));
        assert!(content.contains("let value_100 = 100;"));
        assert!(!content.contains("let value_1 = 1;"), "out-of-window lines are dropped");
        assert!(content.contains("change the hundredth assignment"), "instruction is kept");
        assert!(content.contains("```src/values.rs"), "fence and label are kept");
        assert!(transformed.estimated_tokens() < request.estimated_tokens());
    }

    #[tokio::test]
    async fn no_sites_passes_through() {
        let mock = sites_mock("NONE");
        let assets = PromptAssets::builtin();
        let request = file_request(50);
        let outcome = extract(&request, &mock, &assets, 3).await.unwrap();
        assert!(outcome.request.is_none());
        // the identification call still happened and its usage is reported
        assert_eq!(outcome.local_usage, TokenUsage::new(300, 4));
    }

    #[tokio::test]
    async fn keyword_trigger_extracts_from_longest_user_message() {
        let mock = sites_mock("2, 5");
        let assets = PromptAssets::builtin();
        let doc: Vec<String> = (1..=30).map(|i| format!("retrieved sentence {i} about the change")).collect();
        let request = req(&doc.join("\n"));
        let outcome = extract(&request, &mock, &assets, 0).await.unwrap();
        let transformed = outcome.request.expect("sites found");
        assert_eq!(outcome.hunks.len(), 2);
        let content = &transformed.messages[0].content;
        assert!(content.contains("retrieved sentence 2"));
        assert!(content.contains("retrieved sentence 5"));
        assert!(!content.contains("retrieved sentence 10"));
    }

    proptest! {
        #[test]
        fn hunk_lines_are_verbatim_substrings(
            line_count in 1usize..60,
            site_seed in 0usize..60,
            window in 0usize..5,
        ) {
            let lines: Vec<String> = (0..line_count)
                .map(|i| format!("content line number {i} with text"))
                .collect();
            let site = (site_seed % line_count) + 1;
            let hunk = window_hunk(&lines, site, window, None);
            prop_assert!(hunk.lines.len() <= 2 * window + 1);
            for (offset, line) in hunk.lines.iter().enumerate() {
                let original_idx = hunk.start_line - 1 + offset;
                prop_assert_eq!(line, &lines[original_idx]);
            }
        }
    }
}
