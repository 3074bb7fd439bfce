//! T7 — micro-batching with numbered-answer framing, plus vendor
//! prompt-cache prefix tagging. Requests arriving within the window join
//! the open group (up to the capacity); flush happens at window expiry or
//! capacity, whichever comes first. A request joins exactly one group.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::sync::oneshot;

use crate::backends::{BackendError, ChatClient, ChatOptions};
use crate::telemetry::decision;
use crate::tokens::count_tokens;
use crate::types::{ChatRequest, FinishReason, Message, TokenUsage};

/// Tag the stable prefix (the leading system message) as vendor-cacheable
/// when the gate is on and the prefix is big enough to earn the discount.
pub fn tag_prefix(request: &mut ChatRequest, min_prefix_tokens: u64, vendor_supported: bool) -> bool {
    if !vendor_supported {
        return false;
    }
    let Some(system) = request.system_prompt() else {
        return false;
    };
    if count_tokens(system, None) >= min_prefix_tokens {
        request.cache_prefix_len = Some(1);
        true
    } else {
        false
    }
}

/// What one batched member receives when its group resolves.
#[derive(Debug, Clone)]
pub struct BatchedReply {
    pub content: String,
    /// This member's share of the group's cloud usage (exact partition).
    pub usage_share: TokenUsage,
    pub finish_reason: FinishReason,
    /// Time spent waiting for the group to flush: the full window for
    /// timer flushes, zero for capacity flushes.
    pub wait_ms: u64,
    pub cloud_latency_ms: u64,
    pub decision: &'static str,
    pub group_id: u64,
    pub group_size: usize,
}

struct PendingMember {
    request: ChatRequest,
    reply_to: oneshot::Sender<Result<BatchedReply, BackendError>>,
}

struct OpenGroup {
    id: u64,
    members: Vec<PendingMember>,
}

pub struct Batcher {
    cloud: Arc<dyn ChatClient>,
    window: Duration,
    max_batch: usize,
    framing: String,
    state: Mutex<Option<OpenGroup>>,
    next_group: AtomicU64,
}

impl Batcher {
    pub fn new(
        cloud: Arc<dyn ChatClient>,
        window: Duration,
        max_batch: usize,
        framing: String,
    ) -> Arc<Self> {
        Arc::new(Self {
            cloud,
            window,
            max_batch: max_batch.max(1),
            framing,
            state: Mutex::new(None),
            next_group: AtomicU64::new(1),
        })
    }

    /// Join the open group (or open one) and wait for the group's cloud
    /// call to deliver this request's answer.
    pub async fn submit(self: &Arc<Self>, request: ChatRequest) -> Result<BatchedReply, BackendError> {
        let (reply_to, reply_rx) = oneshot::channel();
        let member = PendingMember { request, reply_to };

        let flush_now: Option<OpenGroup> = {
            let mut state = self.state.lock().expect("batcher lock");
            match state.as_mut() {
                Some(group) => {
                    group.members.push(member);
                    if group.members.len() >= self.max_batch {
                        state.take()
                    } else {
                        None
                    }
                }
                None => {
                    let id = self.next_group.fetch_add(1, Ordering::SeqCst);
                    let group = OpenGroup { id, members: vec![member] };
                    if self.max_batch == 1 {
                        Some(group)
                    } else {
                        *state = Some(group);
                        let batcher = Arc::clone(self);
                        tokio::spawn(async move {
                            tokio::time::sleep(batcher.window).await;
                            let expired = {
                                let mut state = batcher.state.lock().expect("batcher lock");
                                if state.as_ref().map(|g| g.id == id).unwrap_or(false) {
                                    state.take()
                                } else {
                                    None
                                }
                            };
                            if let Some(group) = expired {
                                batcher.flush(group, true).await;
                            }
                        });
                        None
                    }
                }
            }
        };

        if let Some(group) = flush_now {
            self.flush(group, false).await;
        }

        reply_rx
            .await
            .map_err(|_| BackendError::Protocol("batcher dropped the reply channel".into()))?
    }

    async fn flush(&self, group: OpenGroup, by_timer: bool) {
        let wait_ms = if by_timer { self.window.as_millis() as u64 } else { 0 };
        let group_id = group.id;
        let group_size = group.members.len();

        // Singleton groups degenerate to an ordinary call; framing omitted.
        if group_size == 1 {
            let member = group.members.into_iter().next().expect("one member");
            let result = self
                .call_one(&member.request)
                .await
                .map(|(content, usage, finish, latency)| BatchedReply {
                    content,
                    usage_share: usage,
                    finish_reason: finish,
                    wait_ms,
                    cloud_latency_ms: latency,
                    decision: decision::SINGLETON,
                    group_id,
                    group_size,
                });
            let _ = member.reply_to.send(result);
            return;
        }

        let joined = join_queries(&self.framing, &group.members);
        let options = ChatOptions::deterministic();
        let outcome = self.cloud.chat(&[Message::user(joined)], &options).await;

        match outcome {
            Err(e) => {
                let detail = e.to_string();
                for member in group.members {
                    let _ = member.reply_to.send(Err(BackendError::Unreachable {
                        url: "batch".to_string(),
                        detail: detail.clone(),
                    }));
                }
            }
            Ok(outcome) => {
                let segments = split_answers(&outcome.content);
                let served: Vec<usize> = (0..group_size)
                    .filter(|idx| segments.contains_key(&(idx + 1)))
                    .collect();
                // The group's usage is partitioned exactly among the members
                // its response actually served; fallback members account for
                // their own individual calls.
                let input_shares = split_evenly(outcome.usage.input_tokens, served.len());
                let output_shares = split_evenly(outcome.usage.output_tokens, served.len());
                let mut share_iter = input_shares.into_iter().zip(output_shares);

                for (idx, member) in group.members.into_iter().enumerate() {
                    match segments.get(&(idx + 1)) {
                        Some(segment) => {
                            let (input, output) = share_iter.next().expect("share per served");
                            let _ = member.reply_to.send(Ok(BatchedReply {
                                content: segment.clone(),
                                usage_share: TokenUsage::new(input, output),
                                finish_reason: outcome.finish_reason,
                                wait_ms,
                                cloud_latency_ms: outcome.latency_ms,
                                decision: decision::BATCHED,
                                group_id,
                                group_size,
                            }));
                        }
                        None => {
                            // fail-open per member: missing segment gets an
                            // individual call
                            let result = self.call_one(&member.request).await.map(
                                |(content, usage, finish, latency)| BatchedReply {
                                    content,
                                    usage_share: usage,
                                    finish_reason: finish,
                                    wait_ms,
                                    cloud_latency_ms: latency,
                                    decision: decision::FALLBACK,
                                    group_id,
                                    group_size,
                                },
                            );
                            let _ = member.reply_to.send(result);
                        }
                    }
                }
            }
        }
    }

    async fn call_one(
        &self,
        request: &ChatRequest,
    ) -> Result<(String, TokenUsage, FinishReason, u64), BackendError> {
        let options = ChatOptions {
            temperature: request.temperature,
            max_output_tokens: request.max_output_tokens,
            want_logprobs: false,
            cache_prefix_len: request.cache_prefix_len,
        };
        let outcome = self.cloud.chat(&request.messages, &options).await?;
        Ok((outcome.content, outcome.usage, outcome.finish_reason, outcome.latency_ms))
    }
}

fn join_queries(framing: &str, members: &[PendingMember]) -> String {
    let mut joined = String::from(framing);
    if !joined.ends_with('\n') {
        joined.push('\n');
    }
    for (idx, member) in members.iter().enumerate() {
        joined.push_str(&format!("Q{}: {}\n", idx + 1, member.request.content_text()));
    }
    joined
}

/// Split a batched response on line-anchored `A<k>:` markers.
pub fn split_answers(content: &str) -> BTreeMap<usize, String> {
    let mut segments: BTreeMap<usize, String> = BTreeMap::new();
    let mut current: Option<usize> = None;
    for line in content.lines() {
        let marker = line.strip_prefix('A').and_then(|rest| {
            let (digits, tail) = rest.split_once(':')?;
            if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
                Some((digits.parse::<usize>().ok()?, tail.trim_start().to_string()))
            } else {
                None
            }
        });
        match marker {
            Some((number, first)) => {
                segments.insert(number, first);
                current = Some(number);
            }
            None => {
                if let Some(number) = current {
                    let segment = segments.get_mut(&number).expect("open segment");
                    if !segment.is_empty() {
                        segment.push('\n');
                    }
                    segment.push_str(line);
                }
            }
        }
    }
    for segment in segments.values_mut() {
        *segment = segment.trim().to_string();
    }
    segments.retain(|_, v| !v.is_empty());
    segments
}

/// Partition `total` into `n` parts that sum exactly to `total`.
fn split_evenly(total: u64, n: usize) -> Vec<u64> {
    if n == 0 {
        return Vec::new();
    }
    let n64 = n as u64;
    let base = total / n64;
    let remainder = (total % n64) as usize;
    (0..n).map(|i| base + u64::from(i < remainder)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ScriptedBackend, ScriptedBehavior, ScriptedReply};
    use crate::types::Message;
    use proptest::prelude::*;

    fn echo_cloud() -> Arc<ScriptedBackend> {
        Arc::new(ScriptedBackend::new(ScriptedBehavior::new(ScriptedReply::NumberedEcho {
            prefix: "echo: ".to_string(),
        })))
    }

    fn request(text: &str) -> ChatRequest {
        ChatRequest::new(vec![Message::user(text)], "default")
    }

    #[test]
    fn prefix_tagging_respects_threshold_and_gate() {
        let mut big = ChatRequest::new(
            vec![Message::system("x".repeat(8192)), Message::user("q")],
            "default",
        );
        assert!(tag_prefix(&mut big, 1024, true));
        assert_eq!(big.cache_prefix_len, Some(1));

        let mut small = ChatRequest::new(
            vec![Message::system("x".repeat(2000)), Message::user("q")],
            "default",
        );
        assert!(!tag_prefix(&mut small, 1024, true), "500 estimated tokens is below 1024");
        assert_eq!(small.cache_prefix_len, None);

        let mut gated = ChatRequest::new(
            vec![Message::system("x".repeat(20000)), Message::user("q")],
            "default",
        );
        assert!(!tag_prefix(&mut gated, 1024, false), "unsupported vendors are never tagged");
        assert_eq!(gated.cache_prefix_len, None);
    }

    #[test]
    fn split_evenly_is_an_exact_partition() {
        assert_eq!(split_evenly(10, 3), vec![4, 3, 3]);
        assert_eq!(split_evenly(9, 3), vec![3, 3, 3]);
        assert_eq!(split_evenly(2, 3), vec![1, 1, 0]);
        assert_eq!(split_evenly(0, 2), vec![0, 0]);
    }

    #[test]
    fn split_answers_handles_multiline_segments() {
        let content = "A1: first line\ncontinuation\nA2: second\n\nA3: third";
        let segments = split_answers(content);
        assert_eq!(segments.len(), 3);
        assert_eq!(segments[&1], "first line\ncontinuation");
        assert_eq!(segments[&2], "second");
        assert_eq!(segments[&3], "third");
    }

    #[test]
    fn split_answers_ignores_prose_without_markers() {
        assert!(split_answers("no markers here at all").is_empty());
    }

    #[tokio::test]
    async fn singleton_window_expiry_degenerates_to_ordinary_call() {
        let cloud = Arc::new(ScriptedBackend::always("plain answer", TokenUsage::new(40, 8)));
        let batcher = Batcher::new(
            cloud.clone(),
            Duration::from_millis(30),
            8,
            "[batch framing]".to_string(),
        );
        let reply = batcher.submit(request("only one query")).await.unwrap();
        assert_eq!(reply.decision, decision::SINGLETON);
        assert_eq!(reply.content, "plain answer");
        assert_eq!(reply.usage_share, TokenUsage::new(40, 8));
        assert_eq!(reply.wait_ms, 30, "timer flush reports the window as wait");
        assert_eq!(cloud.chat_calls(), 1);
    }

    #[tokio::test]
    async fn three_members_each_get_their_own_segment() {
        let cloud = echo_cloud();
        let batcher = Batcher::new(
            cloud.clone(),
            Duration::from_millis(400),
            8,
            "answer all of these:".to_string(),
        );
        let mut handles = Vec::new();
        for text in ["query one", "query two", "query three"] {
            let batcher = batcher.clone();
            let req = request(text);
            handles.push(tokio::spawn(async move { batcher.submit(req).await.unwrap() }));
        }
        let mut replies = Vec::new();
        for handle in handles {
            replies.push(handle.await.unwrap());
        }
        assert_eq!(cloud.chat_calls(), 1, "one cloud call for the whole group");
        let mut contents: Vec<String> = replies.iter().map(|r| r.content.clone()).collect();
        contents.sort();
        assert_eq!(
            contents,
            vec![
                "echo: query one".to_string(),
                "echo: query three".to_string(),
                "echo: query two".to_string()
            ]
        );
        for reply in &replies {
            assert_eq!(reply.decision, decision::BATCHED);
            assert_eq!(reply.group_size, 3);
        }
        // usage partition is exact
        let total: u64 = replies.iter().map(|r| r.usage_share.total()).sum();
        let input: u64 = replies.iter().map(|r| r.usage_share.input_tokens).sum();
        assert!(total > 0);
        assert_eq!(total - input, replies.iter().map(|r| r.usage_share.output_tokens).sum::<u64>());
    }

    #[tokio::test]
    async fn capacity_flush_fires_before_window() {
        let cloud = echo_cloud();
        let batcher = Batcher::new(
            cloud.clone(),
            Duration::from_secs(60),
            2,
            "framing".to_string(),
        );
        let a = {
            let batcher = batcher.clone();
            tokio::spawn(async move { batcher.submit(request("alpha")).await.unwrap() })
        };
        let b = {
            let batcher = batcher.clone();
            tokio::spawn(async move { batcher.submit(request("beta")).await.unwrap() })
        };
        let (a, b) = (a.await.unwrap(), b.await.unwrap());
        assert_eq!(a.group_id, b.group_id);
        assert_eq!(a.wait_ms, 0, "capacity flush does not wait out the window");
        assert_eq!(cloud.chat_calls(), 1);
    }

    #[tokio::test]
    async fn missing_segment_falls_back_to_individual_call() {
        // scripted response only answers Q1; the second member needs a
        // fallback call
        let behavior = ScriptedBehavior::new(ScriptedReply::text(
            "individual answer",
            TokenUsage::new(20, 5),
        ))
        .rule(
            crate::backends::Pattern::Contains("framing".to_string()),
            ScriptedReply::text("A1: only the first", TokenUsage::new(100, 10)),
        );
        let cloud = Arc::new(ScriptedBackend::new(behavior));
        let batcher = Batcher::new(cloud.clone(), Duration::from_secs(60), 2, "framing".to_string());
        let first = {
            let batcher = batcher.clone();
            tokio::spawn(async move { batcher.submit(request("alpha")).await.unwrap() })
        };
        // order matters for Q-numbering; give the first submit a head start
        tokio::time::sleep(Duration::from_millis(50)).await;
        let second = {
            let batcher = batcher.clone();
            tokio::spawn(async move { batcher.submit(request("beta")).await.unwrap() })
        };
        let (first, second) = (first.await.unwrap(), second.await.unwrap());
        assert_eq!(first.decision, decision::BATCHED);
        assert_eq!(first.content, "only the first");
        assert_eq!(first.usage_share, TokenUsage::new(100, 10), "sole served member takes it all");
        assert_eq!(second.decision, decision::FALLBACK);
        assert_eq!(second.content, "individual answer");
        assert_eq!(second.usage_share, TokenUsage::new(20, 5));
        assert_eq!(cloud.chat_calls(), 2);
    }

    proptest! {
        #[test]
        fn join_then_split_is_a_bijection(count in 1usize..9) {
            // mechanical numbered answers generated from member ids must
            // invert the join
            let answers: String = (1..=count)
                .map(|i| format!("A{i}: payload for member {i}"))
                .collect::<Vec<_>>()
                .join("\n");
            let segments = split_answers(&answers);
            prop_assert_eq!(segments.len(), count);
            for i in 1..=count {
                prop_assert_eq!(&segments[&i], &format!("payload for member {i}"));
            }
        }
    }
}
