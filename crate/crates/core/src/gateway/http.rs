//! Remote backends: OpenAI-style chat completions, Anthropic messages, and
//! the dedicated sentence-MT service.

use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendRequest, CallError, Completion, FinishReason, Role, Usage};

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build()
        .into()
}

struct RawReply {
    status: u16,
    retry_after: Option<Duration>,
    body: String,
}

fn post_json(agent: &ureq::Agent, url: &str, headers: &[(&str, &str)], body: &Value) -> Result<RawReply, CallError> {
    let mut req = agent.post(url);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let mut resp = req.send_json(body).map_err(|e| CallError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let retry_after = resp
        .headers()
        .get("retry-after")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64);
    let body = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| CallError::Transport(e.to_string()))?;
    Ok(RawReply {
        status,
        retry_after,
        body,
    })
}

/// Maps non-2xx statuses onto retry classes.
fn check_status(reply: &RawReply) -> Result<(), CallError> {
    match reply.status {
        200..=299 => Ok(()),
        401 | 403 => Err(CallError::Auth(truncate(&reply.body))),
        429 => Err(CallError::RateLimited {
            retry_after: reply.retry_after,
        }),
        status => Err(CallError::Status {
            status,
            body: truncate(&reply.body),
        }),
    }
}

fn truncate(body: &str) -> String {
    const MAX: usize = 300;
    match body.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}…", &body[..i]),
        None => body.to_string(),
    }
}

fn parse_body(body: &str) -> Result<Value, CallError> {
    serde_json::from_str(body).map_err(|e| CallError::Invalid(format!("response is not JSON: {e}")))
}

fn data_url(image_b64: &str) -> String {
    format!("data:image/jpeg;base64,{image_b64}")
}

fn last_user_index(request: &BackendRequest) -> Option<usize> {
    request.messages.iter().rposition(|m| m.role == Role::User)
}

/// OpenAI-compatible `/v1/chat/completions`.
pub struct OpenAiBackend {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
}

impl OpenAiBackend {
    pub const DEFAULT_ENDPOINT: &'static str = "https://api.openai.com/v1/chat/completions";

    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>) -> Self {
        OpenAiBackend {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            agent: agent(DEFAULT_TIMEOUT),
        }
    }

    pub fn request_body(request: &BackendRequest) -> Value {
        let image_at = request.image_attachment.as_ref().and(last_user_index(request));
        let messages: Vec<Value> = request
            .messages
            .iter()
            .enumerate()
            .map(|(i, m)| match (image_at == Some(i), &request.image_attachment) {
                (true, Some(img)) => json!({
                    "role": m.role.as_str(),
                    "content": [
                        {"type": "text", "text": m.text},
                        {"type": "image_url", "image_url": {"url": data_url(img)}},
                    ],
                }),
                _ => json!({"role": m.role.as_str(), "content": m.text}),
            })
            .collect();
        json!({
            "model": request.model_id,
            "messages": messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        })
    }

    pub fn parse_response(body: &Value) -> Result<Completion, CallError> {
        let choice = body
            .pointer("/choices/0")
            .ok_or_else(|| CallError::Invalid("no choices in response".into()))?;
        let text = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
            Some("length") => FinishReason::Length,
            Some("stop") | None => FinishReason::Complete,
            Some("content_filter") => FinishReason::Error,
            Some(_) => FinishReason::Complete,
        };
        let usage = body.get("usage").map(|u| Usage {
            prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
        });
        Ok(Completion {
            text,
            finish_reason,
            usage,
        })
    }
}

impl Backend for OpenAiBackend {
    fn kind(&self) -> &'static str {
        "openai"
    }

    fn call(&self, request: &BackendRequest) -> Result<Completion, CallError> {
        let auth = format!("Bearer {}", self.api_key);
        let reply = post_json(
            &self.agent,
            &self.endpoint,
            &[("authorization", auth.as_str())],
            &Self::request_body(request),
        )?;
        check_status(&reply)?;
        Self::parse_response(&parse_body(&reply.body)?)
    }
}

/// Anthropic `/v1/messages`.
pub struct AnthropicBackend {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
}

impl AnthropicBackend {
    pub const DEFAULT_ENDPOINT: &'static str = "https://api.anthropic.com/v1/messages";
    pub const API_VERSION: &'static str = "2023-06-01";

    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>) -> Self {
        AnthropicBackend {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            agent: agent(DEFAULT_TIMEOUT),
        }
    }

    pub fn request_body(request: &BackendRequest) -> Value {
        let image_at = request.image_attachment.as_ref().and(last_user_index(request));
        let system: Vec<&str> = request
            .messages
            .iter()
            .filter(|m| m.role == Role::System)
            .map(|m| m.text.as_str())
            .collect();
        let messages: Vec<Value> = request
            .messages
            .iter()
            .enumerate()
            .filter(|(_, m)| m.role != Role::System)
            .map(|(i, m)| match (image_at == Some(i), &request.image_attachment) {
                (true, Some(img)) => json!({
                    "role": m.role.as_str(),
                    "content": [
                        {"type": "image", "source": {"type": "base64", "media_type": "image/jpeg", "data": img}},
                        {"type": "text", "text": m.text},
                    ],
                }),
                _ => json!({"role": m.role.as_str(), "content": m.text}),
            })
            .collect();
        let mut body = json!({
            "model": request.model_id,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "messages": messages,
        });
        if !system.is_empty() {
            body["system"] = Value::String(system.join("\n\n"));
        }
        body
    }

    pub fn parse_response(body: &Value) -> Result<Completion, CallError> {
        let blocks = body
            .get("content")
            .and_then(Value::as_array)
            .ok_or_else(|| CallError::Invalid("no content in response".into()))?;
        let text: String = blocks
            .iter()
            .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
            .filter_map(|b| b.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("");
        let finish_reason = match body.get("stop_reason").and_then(Value::as_str) {
            Some("max_tokens") => FinishReason::Length,
            _ => FinishReason::Complete,
        };
        let usage = body.get("usage").map(|u| Usage {
            prompt_tokens: u.get("input_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: u.get("output_tokens").and_then(Value::as_u64).unwrap_or(0),
        });
        Ok(Completion {
            text,
            finish_reason,
            usage,
        })
    }
}

impl Backend for AnthropicBackend {
    fn kind(&self) -> &'static str {
        "anthropic"
    }

    fn call(&self, request: &BackendRequest) -> Result<Completion, CallError> {
        let reply = post_json(
            &self.agent,
            &self.endpoint,
            &[
                ("x-api-key", self.api_key.as_str()),
                ("anthropic-version", Self::API_VERSION),
            ],
            &Self::request_body(request),
        )?;
        check_status(&reply)?;
        Self::parse_response(&parse_body(&reply.body)?)
    }
}

/// Sentence-level MT service:
/// `{source_lang, target_lang, sentences[]}` → `{translations[]}`.
///
/// The request's `source_text`, `source_lang` and `target_lang` params carry
/// the segment; messages are ignored.
pub struct DedicatedMtBackend {
    endpoint: String,
    agent: ureq::Agent,
}

impl DedicatedMtBackend {
    pub fn new(endpoint: impl Into<String>) -> Self {
        DedicatedMtBackend {
            endpoint: endpoint.into(),
            agent: agent(DEFAULT_TIMEOUT),
        }
    }

    pub fn request_body(request: &BackendRequest) -> Result<Value, CallError> {
        let param = |k: &str| {
            request
                .params
                .get(k)
                .cloned()
                .ok_or_else(|| CallError::Invalid(format!("MT request lacks `{k}`")))
        };
        Ok(json!({
            "source_lang": param("source_lang")?,
            "target_lang": param("target_lang")?,
            "sentences": [param("source_text")?],
        }))
    }

    pub fn parse_response(body: &Value) -> Result<Completion, CallError> {
        let text = body
            .pointer("/translations/0")
            .and_then(Value::as_str)
            .ok_or_else(|| CallError::Invalid("no translations in response".into()))?;
        Ok(Completion {
            text: text.to_string(),
            finish_reason: FinishReason::Complete,
            usage: None,
        })
    }
}

impl Backend for DedicatedMtBackend {
    fn kind(&self) -> &'static str {
        "dedicated_mt"
    }

    fn call(&self, request: &BackendRequest) -> Result<Completion, CallError> {
        let body = Self::request_body(request)?;
        let reply = post_json(&self.agent, &self.endpoint, &[], &body)?;
        check_status(&reply)?;
        Self::parse_response(&parse_body(&reply.body)?)
    }
}
