//! MCP server over stdio: newline-delimited JSON-RPC 2.0 exposing the four
//! tools `split.complete`, `split.cache_lookup`, `split.classify`, and
//! `split.stats`. Calls are processed sequentially in arrival order.

use std::sync::Arc;

use serde_json::{json, Value};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};

use crate::pipeline::{Pipeline, PipelineError};
use crate::tactics::route::RouteLabel;
use crate::telemetry;
use crate::types::{ChatRequest, Message};

pub const PROTOCOL_VERSION: &str = "2024-11-05";

pub struct McpServer {
    pipeline: Arc<Pipeline>,
}

impl McpServer {
    pub fn new(pipeline: Arc<Pipeline>) -> Self {
        Self { pipeline }
    }

    /// Read JSON-RPC requests line by line from stdin and answer on stdout.
    pub async fn run_stdio(&self) -> anyhow::Result<()> {
        let stdin = BufReader::new(tokio::io::stdin());
        let mut stdout = tokio::io::stdout();
        let mut lines = stdin.lines();
        while let Some(line) = lines.next_line().await? {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(reply) = self.handle_line(&line).await {
                stdout.write_all(reply.as_bytes()).await?;
                stdout.write_all(b"\n").await?;
                stdout.flush().await?;
            }
        }
        Ok(())
    }

    /// One request line in, at most one response line out (notifications
    /// get none). Framing: JSON-RPC 2.0, response id matches the request.
    pub async fn handle_line(&self, line: &str) -> Option<String> {
        let parsed: Result<Value, _> = serde_json::from_str(line);
        let request = match parsed {
            Ok(value) => value,
            Err(e) => {
                return Some(
                    json!({
                        "jsonrpc": "2.0",
                        "id": Value::Null,
                        "error": {"code": -32700, "message": format!("parse error: {e}")},
                    })
                    .to_string(),
                )
            }
        };
        let method = request.get("method").and_then(Value::as_str).unwrap_or_default().to_string();
        let id = request.get("id").cloned();
        let params = request.get("params").cloned().unwrap_or(Value::Null);

        // notifications (no id) never get a response
        let id = id?;

        let reply = match method.as_str() {
            "initialize" => Ok(json!({
                "protocolVersion": PROTOCOL_VERSION,
                "capabilities": {"tools": {}},
                "serverInfo": {"name": "splitter", "version": env!("CARGO_PKG_VERSION")},
            })),
            "ping" => Ok(json!({})),
            "tools/list" => Ok(json!({"tools": tool_listing()})),
            "tools/call" => self.tools_call(&params).await,
            _ => Err((-32601, format!("method not found: {method}"))),
        };

        let body = match reply {
            Ok(result) => json!({"jsonrpc": "2.0", "id": id, "result": result}),
            Err((code, message)) => json!({
                "jsonrpc": "2.0",
                "id": id,
                "error": {"code": code, "message": message},
            }),
        };
        Some(body.to_string())
    }

    async fn tools_call(&self, params: &Value) -> Result<Value, (i32, String)> {
        let name = params
            .get("name")
            .and_then(Value::as_str)
            .ok_or((-32602, "missing tool name".to_string()))?;
        let arguments = params.get("arguments").cloned().unwrap_or(json!({}));
        match name {
            "split.complete" => Ok(self.complete(&arguments).await),
            "split.classify" => Ok(self.classify(&arguments).await),
            "split.cache_lookup" => Ok(self.cache_lookup(&arguments).await),
            "split.stats" => Ok(self.stats(&arguments).await),
            other => Err((-32602, format!("unknown tool: {other}"))),
        }
    }

    async fn complete(&self, arguments: &Value) -> Value {
        let Some(request) = request_from_args(arguments) else {
            return tool_error("split.complete requires a non-empty \"prompt\" string");
        };
        match self.pipeline.run(request).await {
            Ok(response) => tool_result(json!({
                "content": response.content,
                "source": response.source.as_str(),
                "usage": {
                    "input_tokens": response.usage.input_tokens,
                    "output_tokens": response.usage.output_tokens,
                },
            })),
            Err(PipelineError::CloudUpstream(e)) => tool_error(&format!("cloud upstream: {e}")),
            Err(e) => tool_error(&e.to_string()),
        }
    }

    async fn classify(&self, arguments: &Value) -> Value {
        let Some(request) = request_from_args(arguments) else {
            return tool_error("split.classify requires a non-empty \"prompt\" string");
        };
        match self.pipeline.classify_only(&request).await {
            Ok(result) => tool_result(json!({
                "label": match result.decision.label {
                    RouteLabel::Trivial => "trivial",
                    RouteLabel::Complex => "complex",
                },
                "confidence": result.decision.confidence,
                "raw_output": result.decision.raw_output,
            })),
            Err(e) => tool_error(&format!("classifier unavailable: {e}")),
        }
    }

    async fn cache_lookup(&self, arguments: &Value) -> Value {
        let Some(request) = request_from_args(arguments) else {
            return tool_error("split.cache_lookup requires a non-empty \"prompt\" string");
        };
        match self.pipeline.cache_lookup_only(&request).await {
            Ok(Some(hit)) => tool_result(json!({
                "hit": true,
                "similarity": hit.similarity,
                "content": hit.entry.response_content,
                "workspace": hit.entry.workspace_id,
            })),
            Ok(None) => tool_result(json!({"hit": false})),
            Err(e) => tool_error(&format!("cache unavailable: {e}")),
        }
    }

    async fn stats(&self, arguments: &Value) -> Value {
        let since_ms = arguments.get("since_ms").and_then(Value::as_i64);
        let path = self.pipeline.telemetry().path().to_path_buf();
        let (events, skipped) = telemetry::read_events(&path).unwrap_or_default();
        let report = telemetry::stats(&events, since_ms, skipped);
        tool_result(serde_json::to_value(report).unwrap_or_else(|_| json!({})))
    }
}

/// Build a pipeline request from tool arguments: prompt (+ optional
/// system), workspace, no_cache.
fn request_from_args(arguments: &Value) -> Option<ChatRequest> {
    let prompt = arguments.get("prompt").and_then(Value::as_str)?;
    if prompt.is_empty() {
        return None;
    }
    let mut messages = Vec::new();
    if let Some(system) = arguments.get("system").and_then(Value::as_str) {
        messages.push(Message::system(system));
    }
    messages.push(Message::user(prompt));
    let workspace = arguments
        .get("workspace")
        .and_then(Value::as_str)
        .unwrap_or("default");
    let mut request = ChatRequest::new(messages, workspace);
    request.no_cache = arguments.get("no_cache").and_then(Value::as_bool).unwrap_or(false);
    Some(request)
}

fn tool_result(payload: Value) -> Value {
    json!({"content": [{"type": "text", "text": payload.to_string()}]})
}

fn tool_error(message: &str) -> Value {
    json!({
        "content": [{"type": "text", "text": json!({"error": message}).to_string()}],
        "isError": true,
    })
}

fn tool_listing() -> Value {
    json!([
        {
            "name": "split.complete",
            "description": "Run a prompt through the full token-saving pipeline and return the answer with its source and cloud-attributed usage.",
            "inputSchema": {
                "type": "object",
                "properties": {
                    "prompt": {"type": "string"},
                    "system": {"type": "string"},
                    "workspace": {"type": "string"},
                    "no_cache": {"type": "boolean"},
                },
                "required": ["prompt"],
            },
        },
        {
            "name": "split.cache_lookup",
            "description": "Probe the semantic cache for a prompt without calling any model backend.",
            "inputSchema": {
                "type": "object",
                "properties": {
                    "prompt": {"type": "string"},
                    "workspace": {"type": "string"},
                },
                "required": ["prompt"],
            },
        },
        {
            "name": "split.classify",
            "description": "Run the trivial/complex router on a prompt without answering it.",
            "inputSchema": {
                "type": "object",
                "properties": {"prompt": {"type": "string"}},
                "required": ["prompt"],
            },
        },
        {
            "name": "split.stats",
            "description": "Telemetry aggregates for this server run: request count, local answer rate, cache hit rate, and estimated savings.",
            "inputSchema": {
                "type": "object",
                "properties": {"since_ms": {"type": "integer"}},
            },
        },
    ])
}
