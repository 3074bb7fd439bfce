//! The OpenAI-compatible HTTP proxy: `/v1/chat/completions` and
//! `/v1/models` on a loopback port, forwarding to the pipeline. Usage in
//! the response is the pipeline's cloud-attributed usage (zero for local
//! and cache answers); the actual source rides in a `splitter` extension
//! object.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::pipeline::{Pipeline, PipelineError};
use crate::types::{ChatRequest, FinishReason, Message, Role};

pub struct HttpState {
    pub pipeline: Arc<Pipeline>,
    pub auth_token: Option<String>,
}

pub fn router(state: Arc<HttpState>) -> Router {
    Router::new()
        .route("/v1/chat/completions", post(chat_completions))
        .route("/v1/models", get(models))
        .with_state(state)
}

/// Bind and serve on the loopback interface.
pub async fn serve(state: Arc<HttpState>, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    tracing::info!("http proxy listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    role: String,
    #[serde(default)]
    content: Option<Value>,
    #[serde(default)]
    name: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct SplitterExt {
    #[serde(default)]
    workspace: Option<String>,
    #[serde(default)]
    no_cache: Option<bool>,
    /// Per-call dotted-path tactic overrides; per-call wins.
    #[serde(default)]
    overrides: BTreeMap<String, Value>,
}

#[derive(Debug, Deserialize)]
struct ChatCompletionsBody {
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    messages: Option<Vec<WireMessage>>,
    #[serde(default)]
    temperature: Option<f64>,
    #[serde(default)]
    max_tokens: Option<u32>,
    #[serde(default)]
    max_completion_tokens: Option<u32>,
    #[serde(default)]
    stream: Option<bool>,
    #[serde(default)]
    workspace: Option<String>,
    #[serde(default)]
    no_cache: Option<bool>,
    #[serde(default)]
    splitter: Option<SplitterExt>,
}

fn error_response(status: StatusCode, code: &str, message: &str) -> Response {
    let body = json!({
        "error": {
            "message": message,
            "type": if status.is_client_error() { "invalid_request_error" } else { "upstream_error" },
            "code": code,
        }
    });
    (status, Json(body)).into_response()
}

fn parse_role(role: &str) -> Option<Role> {
    match role {
        "system" => Some(Role::System),
        "user" => Some(Role::User),
        "assistant" => Some(Role::Assistant),
        "tool" => Some(Role::Tool),
        _ => None,
    }
}

/// OpenAI content is a string or an array of typed parts; flatten the text.
fn parse_content(content: &Option<Value>) -> Option<String> {
    match content {
        None | Some(Value::Null) => Some(String::new()),
        Some(Value::String(text)) => Some(text.clone()),
        Some(Value::Array(parts)) => {
            let mut out = String::new();
            for part in parts {
                out.push_str(part.pointer("/text").and_then(Value::as_str)?);
            }
            Some(out)
        }
        Some(_) => None,
    }
}

fn finish_reason_str(reason: FinishReason) -> &'static str {
    match reason {
        FinishReason::Stop => "stop",
        FinishReason::Length => "length",
        FinishReason::Error => "error",
    }
}

async fn chat_completions(
    State(state): State<Arc<HttpState>>,
    headers: HeaderMap,
    body: Result<Json<ChatCompletionsBody>, axum::extract::rejection::JsonRejection>,
) -> Response {
    if let Some(expected) = &state.auth_token {
        let presented = headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(expected.as_str()) {
            return error_response(StatusCode::UNAUTHORIZED, "bad_auth", "invalid bearer token");
        }
    }

    let Json(body) = match body {
        Ok(body) => body,
        Err(rejection) => {
            return error_response(
                StatusCode::BAD_REQUEST,
                "malformed_body",
                &rejection.to_string(),
            )
        }
    };

    let Some(wire_messages) = body.messages else {
        return error_response(StatusCode::BAD_REQUEST, "missing_messages", "messages is required");
    };
    if wire_messages.is_empty() {
        return error_response(StatusCode::BAD_REQUEST, "missing_messages", "messages is empty");
    }

    let mut messages = Vec::with_capacity(wire_messages.len());
    for wire in &wire_messages {
        let Some(role) = parse_role(&wire.role) else {
            return error_response(
                StatusCode::BAD_REQUEST,
                "invalid_role",
                &format!("unknown role {:?}", wire.role),
            );
        };
        let Some(content) = parse_content(&wire.content) else {
            return error_response(
                StatusCode::BAD_REQUEST,
                "invalid_content",
                "message content must be a string or text parts",
            );
        };
        messages.push(Message { role, content, name: wire.name.clone() });
    }

    let ext = body.splitter.unwrap_or_default();
    let workspace = headers
        .get("x-workspace")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .or(ext.workspace)
        .or(body.workspace)
        .unwrap_or_else(|| "default".to_string());

    let mut request = ChatRequest::new(messages, workspace);
    request.no_cache = ext.no_cache.or(body.no_cache).unwrap_or(false);
    request.temperature = body.temperature;
    request.max_output_tokens = body.max_tokens.or(body.max_completion_tokens);
    if let Err(e) = request.validate() {
        return error_response(StatusCode::BAD_REQUEST, "invalid_request", &e.to_string());
    }

    let request_id = request.client_request_id.clone();
    let response = match state.pipeline.run_with_overrides(request, &ext.overrides).await {
        Ok(response) => response,
        Err(PipelineError::InvalidRequest(e)) => {
            return error_response(StatusCode::BAD_REQUEST, "invalid_request", &e.to_string())
        }
        Err(PipelineError::Override(e)) => {
            return error_response(StatusCode::BAD_REQUEST, "invalid_override", &e.to_string())
        }
        Err(PipelineError::CloudUpstream(e)) => {
            return error_response(StatusCode::BAD_GATEWAY, "cloud_unreachable", &e.to_string())
        }
    };

    let completion_id = format!("chatcmpl-{request_id}");
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let model = body.model.unwrap_or_else(|| state.pipeline.cloud_model().to_string());
    let finish = finish_reason_str(response.finish_reason);

    if body.stream.unwrap_or(false) {
        // accepted-but-not-streamed: one terminal chunk then [DONE]
        let chunk = json!({
            "id": completion_id,
            "object": "chat.completion.chunk",
            "created": created,
            "model": model,
            "choices": [{
                "index": 0,
                "delta": {"role": "assistant", "content": response.content},
                "finish_reason": finish,
            }],
            "splitter": {"source": response.source.as_str(), "request_id": request_id},
        });
        let body = format!("data: {chunk}\n\ndata: [DONE]\n\n");
        return ([(axum::http::header::CONTENT_TYPE, "text/event-stream")], body).into_response();
    }

    let body = json!({
        "id": completion_id,
        "object": "chat.completion",
        "created": created,
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": response.content},
            "finish_reason": finish,
        }],
        "usage": {
            "prompt_tokens": response.usage.input_tokens,
            "completion_tokens": response.usage.output_tokens,
            "total_tokens": response.usage.total(),
        },
        "splitter": {"source": response.source.as_str(), "request_id": request_id},
    });
    Json(body).into_response()
}

async fn models(State(state): State<Arc<HttpState>>) -> Response {
    let body = json!({
        "object": "list",
        "data": [
            {"id": state.pipeline.cloud_model(), "object": "model", "owned_by": "upstream"},
            {"id": "splitter", "object": "model", "owned_by": "splitter"},
        ]
    });
    Json(body).into_response()
}
