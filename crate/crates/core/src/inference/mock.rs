//! Deterministic scripted backend, usable in-process or served over HTTP
//! with the same chat-completions protocol as a real endpoint.
//!
//! Every request must match exactly one script entry; zero or multiple
//! matches are configuration errors, never silent fallbacks. Entries can
//! script token counts, failures, prefill rejection, latency, and
//! per-invocation output sequences.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::domain::{ChatMessage, ChatRole, TokenSource};
use crate::error::{Error, Result};

use super::{fallback_token_estimate, CompletionRequest, CompletionResult, Endpoint};

/// Match rule over one request. Every set field must hold; unset fields
/// don't constrain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchRule {
    /// Exact match on the request tag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    /// Prefix match on the request tag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag_prefix: Option<String>,
    /// Substrings that must all appear in the last user message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_contains: Option<Vec<String>>,
    /// Some(true): only requests with a prefill; Some(false): only without.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requires_prefill: Option<bool>,
}

/// One scripted behavior.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    /// Model name this entry serves; unset matches any model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, rename = "match")]
    pub rule: MatchRule,
    /// Single scripted output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Outputs served in invocation order (wrapping around at the end);
    /// takes precedence over `output`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<String>>,
    /// Scripted completion tokens; absent means "no usage block" and the
    /// deterministic byte estimate applies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
    /// Per-invocation completion tokens aligned with `outputs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens_list: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    /// "timeout", "http:<status>", or any message for a generic failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<String>,
    /// Reject requests carrying a prefill, like a server without
    /// continuation support.
    #[serde(default, skip_serializing_if = "is_false")]
    pub reject_prefill: bool,
    /// Simulated service time, to exercise concurrency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
}

fn is_false(b: &bool) -> bool {
    !b
}

impl MockEntry {
    fn matches(&self, request: &CompletionRequest) -> bool {
        if let Some(model) = &self.model {
            if *model != request.model_name {
                return false;
            }
        }
        let rule = &self.rule;
        if let Some(tag) = &rule.tag {
            if *tag != request.request_tag {
                return false;
            }
        }
        if let Some(prefix) = &rule.tag_prefix {
            if !request.request_tag.starts_with(prefix.as_str()) {
                return false;
            }
        }
        if let Some(needles) = &rule.user_contains {
            let haystack = request.last_user_text();
            if !needles.iter().all(|n| haystack.contains(n.as_str())) {
                return false;
            }
        }
        if let Some(wants_prefill) = rule.requires_prefill {
            if wants_prefill != request.prefill_text.is_some() {
                return false;
            }
        }
        true
    }
}

/// A full script: just the entry list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub entries: Vec<MockEntry>,
}

impl MockScript {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading mock script {}", path.display()), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::serde(format!("parsing mock script {}", path.display()), e))
    }
}

/// A request as the mock saw it, for test assertions.
#[derive(Debug, Clone)]
pub struct CapturedRequest {
    pub entry_index: usize,
    pub model_name: String,
    pub request_tag: String,
    pub last_user_text: String,
    pub prefill_text: Option<String>,
    pub messages: Vec<ChatMessage>,
}

/// Scripted backend with per-entry invocation counts and a concurrent
/// high-water gauge.
pub struct MockBackend {
    entries: Vec<MockEntry>,
    entry_calls: Vec<AtomicU64>,
    total_calls: AtomicU64,
    in_flight: AtomicUsize,
    high_water: AtomicUsize,
    captured: Mutex<Vec<CapturedRequest>>,
}

struct InFlightGuard<'a>(&'a MockBackend);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

impl MockBackend {
    pub fn new(script: MockScript) -> Arc<Self> {
        let entry_calls = script.entries.iter().map(|_| AtomicU64::new(0)).collect();
        Arc::new(MockBackend {
            entries: script.entries,
            entry_calls,
            total_calls: AtomicU64::new(0),
            in_flight: AtomicUsize::new(0),
            high_water: AtomicUsize::new(0),
            captured: Mutex::new(Vec::new()),
        })
    }

    pub fn total_calls(&self) -> u64 {
        self.total_calls.load(Ordering::SeqCst)
    }

    pub fn entry_calls(&self, index: usize) -> u64 {
        self.entry_calls[index].load(Ordering::SeqCst)
    }

    /// Highest number of requests that were ever in flight simultaneously.
    pub fn max_concurrent(&self) -> usize {
        self.high_water.load(Ordering::SeqCst)
    }

    pub fn captured_requests(&self) -> Vec<CapturedRequest> {
        self.captured.lock().expect("mock capture mutex").clone()
    }

    pub async fn complete(
        &self,
        _endpoint: &Endpoint,
        request: &CompletionRequest,
    ) -> Result<CompletionResult> {
        let current = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.high_water.fetch_max(current, Ordering::SeqCst);
        let _guard = InFlightGuard(self);
        self.total_calls.fetch_add(1, Ordering::SeqCst);

        let matching: Vec<usize> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.matches(request))
            .map(|(i, _)| i)
            .collect();
        let index = match matching.as_slice() {
            [one] => *one,
            [] => {
                return Err(Error::MockNoMatch {
                    model: request.model_name.clone(),
                    tag: request.request_tag.clone(),
                })
            }
            many => {
                return Err(Error::MockAmbiguous {
                    model: request.model_name.clone(),
                    tag: request.request_tag.clone(),
                    indexes: many.to_vec(),
                })
            }
        };
        let entry = &self.entries[index];
        let invocation = self.entry_calls[index].fetch_add(1, Ordering::SeqCst) as usize;

        self.captured.lock().expect("mock capture mutex").push(CapturedRequest {
            entry_index: index,
            model_name: request.model_name.clone(),
            request_tag: request.request_tag.clone(),
            last_user_text: request.last_user_text().to_string(),
            prefill_text: request.prefill_text.clone(),
            messages: request.messages.clone(),
        });

        if let Some(ms) = entry.latency_ms {
            tokio::time::sleep(std::time::Duration::from_millis(ms)).await;
        }

        if entry.reject_prefill && request.prefill_text.is_some() {
            return Err(Error::PrefillUnsupported { model: request.model_name.clone() });
        }
        if let Some(fail) = &entry.fail {
            return Err(match fail.as_str() {
                "timeout" => Error::Timeout { url: "mock".into(), secs: 0 },
                other => match other.strip_prefix("http:") {
                    Some(code) => Error::HttpStatus {
                        url: "mock".into(),
                        status: code.parse().unwrap_or(500),
                        excerpt: "scripted failure".into(),
                    },
                    None => Error::MockScriptedFailure { index, message: other.to_string() },
                },
            });
        }

        let output = match (&entry.outputs, &entry.output) {
            (Some(outputs), _) if !outputs.is_empty() => {
                outputs[invocation % outputs.len()].clone()
            }
            (_, Some(output)) => output.clone(),
            _ => String::new(),
        };
        let scripted_tokens = match &entry.completion_tokens_list {
            Some(list) if !list.is_empty() => Some(list[invocation % list.len()]),
            _ => entry.completion_tokens,
        };
        let (completion_tokens, token_source) = match scripted_tokens {
            Some(n) => (n, TokenSource::ServerUsage),
            None => (fallback_token_estimate(&output), TokenSource::FallbackEstimate),
        };
        let prompt_tokens = entry.prompt_tokens.unwrap_or_else(|| {
            let joined: usize = request.messages.iter().map(|m| m.content.len()).sum();
            (joined as u64).div_ceil(4)
        });
        Ok(CompletionResult {
            output_text: output,
            completion_tokens,
            prompt_tokens,
            token_source,
            latency_ms: entry.latency_ms.unwrap_or(0),
        })
    }
}

// ---------------------------------------------------------------------------
// HTTP front end: the same script served over the wire protocol.
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct WireRequest {
    model: String,
    messages: Vec<WireMessage>,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    role: String,
    content: String,
}

async fn chat_completions(
    State(backend): State<Arc<MockBackend>>,
    headers: HeaderMap,
    Json(wire): Json<WireRequest>,
) -> (StatusCode, Json<serde_json::Value>) {
    let tag = headers
        .get("x-request-tag")
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();

    let mut messages: Vec<ChatMessage> = Vec::new();
    let mut prefill = None;
    let total = wire.messages.len();
    for (i, m) in wire.messages.into_iter().enumerate() {
        let role = match m.role.as_str() {
            "system" => ChatRole::System,
            "user" => ChatRole::User,
            "assistant" => ChatRole::Assistant,
            other => {
                return error_response(
                    StatusCode::BAD_REQUEST,
                    format!("unknown message role `{other}`"),
                )
            }
        };
        // A trailing assistant message is the prefill convention.
        if i + 1 == total && role == ChatRole::Assistant {
            prefill = Some(m.content);
        } else {
            messages.push(ChatMessage { role, content: m.content });
        }
    }

    let request = CompletionRequest {
        model_name: wire.model,
        messages,
        prefill_text: prefill,
        sampling: super::RequestSampling { temperature: 0.0, top_p: 1.0, max_tokens: 1 },
        request_tag: tag,
    };
    if let Err(e) = request.validate() {
        return error_response(StatusCode::BAD_REQUEST, e.to_string());
    }

    let endpoint = loopback_endpoint(&request.model_name);
    match backend.complete(&endpoint, &request).await {
        Ok(result) => {
            let mut body = serde_json::json!({
                "id": format!("mock-{}", backend.total_calls()),
                "object": "chat.completion",
                "model": request.model_name,
                "choices": [{
                    "index": 0,
                    "message": {"role": "assistant", "content": result.output_text},
                    "finish_reason": "stop",
                }],
            });
            // Only scripted counts produce a usage block; estimate cases
            // leave it out so the client's fallback path engages.
            if result.token_source == TokenSource::ServerUsage {
                body["usage"] = serde_json::json!({
                    "prompt_tokens": result.prompt_tokens,
                    "completion_tokens": result.completion_tokens,
                    "total_tokens": result.prompt_tokens + result.completion_tokens,
                });
            }
            (StatusCode::OK, Json(body))
        }
        Err(e) => {
            let status = match &e {
                Error::MockNoMatch { .. } | Error::MockAmbiguous { .. } => StatusCode::BAD_REQUEST,
                Error::PrefillUnsupported { .. } => StatusCode::BAD_REQUEST,
                Error::HttpStatus { status, .. } => {
                    StatusCode::from_u16(*status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
                }
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            };
            error_response(status, e.to_string())
        }
    }
}

fn error_response(status: StatusCode, message: String) -> (StatusCode, Json<serde_json::Value>) {
    (status, Json(serde_json::json!({"error": {"message": message}})))
}

fn loopback_endpoint(model: &str) -> Endpoint {
    Endpoint {
        base_url: "mock://".into(),
        model_name: model.to_string(),
        role: crate::domain::ModelRole::Thinking,
        bearer_token: None,
        supports_prefill: true,
        extra_request_fields: Default::default(),
        timeout: std::time::Duration::from_secs(600),
        retries: 0,
        backoff: std::time::Duration::from_millis(1),
    }
}

/// Serve the script over HTTP on an ephemeral local port. Returns the bound
/// address (use `http://{addr}/v1` as the endpoint base URL) and the server
/// task handle.
pub async fn spawn_http_mock(
    backend: Arc<MockBackend>,
) -> Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let app = Router::new()
        .route("/v1/chat/completions", post(chat_completions))
        .with_state(backend);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
        .await
        .map_err(|e| Error::io("binding mock HTTP server", e))?;
    let addr = listener.local_addr().map_err(|e| Error::io("reading mock server addr", e))?;
    let handle = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok((addr, handle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::RequestSampling;

    fn request(model: &str, tag: &str, user: &str) -> CompletionRequest {
        CompletionRequest {
            model_name: model.into(),
            messages: vec![ChatMessage::user(user)],
            prefill_text: None,
            sampling: RequestSampling { temperature: 0.0, top_p: 1.0, max_tokens: 8 },
            request_tag: tag.into(),
        }
    }

    fn endpoint() -> Endpoint {
        loopback_endpoint("m")
    }

    #[tokio::test]
    async fn scripted_echo() {
        let backend = MockBackend::new(MockScript {
            entries: vec![MockEntry {
                model: Some("m".into()),
                rule: MatchRule { tag: Some("t1".into()), ..Default::default() },
                output: Some("\\boxed{72}".into()),
                completion_tokens: Some(5),
                prompt_tokens: Some(9),
                ..Default::default()
            }],
        });
        let result = backend.complete(&endpoint(), &request("m", "t1", "q")).await.unwrap();
        assert_eq!(result.output_text, "\\boxed{72}");
        assert_eq!(result.completion_tokens, 5);
        assert_eq!(result.prompt_tokens, 9);
        assert_eq!(result.token_source, TokenSource::ServerUsage);
        assert_eq!(backend.total_calls(), 1);
        assert_eq!(backend.entry_calls(0), 1);
    }

    #[tokio::test]
    async fn missing_usage_falls_back_to_byte_estimate() {
        let backend = MockBackend::new(MockScript {
            entries: vec![MockEntry {
                rule: MatchRule { tag: Some("t".into()), ..Default::default() },
                output: Some("x".repeat(40)),
                ..Default::default()
            }],
        });
        let result = backend.complete(&endpoint(), &request("m", "t", "q")).await.unwrap();
        assert_eq!(result.completion_tokens, 10);
        assert_eq!(result.token_source, TokenSource::FallbackEstimate);
    }

    #[tokio::test]
    async fn zero_matches_and_ambiguity_are_errors() {
        let backend = MockBackend::new(MockScript {
            entries: vec![
                MockEntry {
                    rule: MatchRule { tag_prefix: Some("a".into()), ..Default::default() },
                    output: Some("1".into()),
                    ..Default::default()
                },
                MockEntry {
                    rule: MatchRule { user_contains: Some(vec!["q".into()]), ..Default::default() },
                    output: Some("2".into()),
                    ..Default::default()
                },
            ],
        });
        let err = backend.complete(&endpoint(), &request("m", "zzz", "nope")).await.unwrap_err();
        assert!(matches!(err, Error::MockNoMatch { .. }));
        let err = backend.complete(&endpoint(), &request("m", "abc", "q")).await.unwrap_err();
        assert!(matches!(err, Error::MockAmbiguous { ref indexes, .. } if indexes == &vec![0, 1]));
    }

    #[tokio::test]
    async fn outputs_sequence_by_invocation() {
        let backend = MockBackend::new(MockScript {
            entries: vec![MockEntry {
                rule: MatchRule { tag_prefix: Some("bon".into()), ..Default::default() },
                outputs: Some(vec!["a".into(), "b".into()]),
                completion_tokens_list: Some(vec![120, 80]),
                ..Default::default()
            }],
        });
        let r1 = backend.complete(&endpoint(), &request("m", "bon:0", "q")).await.unwrap();
        let r2 = backend.complete(&endpoint(), &request("m", "bon:1", "q")).await.unwrap();
        assert_eq!((r1.output_text.as_str(), r1.completion_tokens), ("a", 120));
        assert_eq!((r2.output_text.as_str(), r2.completion_tokens), ("b", 80));
    }

    #[tokio::test]
    async fn prefill_rejection_and_match() {
        let backend = MockBackend::new(MockScript {
            entries: vec![
                MockEntry {
                    rule: MatchRule { requires_prefill: Some(true), ..Default::default() },
                    reject_prefill: true,
                    ..Default::default()
                },
                MockEntry {
                    rule: MatchRule { requires_prefill: Some(false), ..Default::default() },
                    output: Some("plain".into()),
                    ..Default::default()
                },
            ],
        });
        let mut with_prefill = request("m", "t", "q");
        with_prefill.prefill_text = Some("<think>\n</think>\n".into());
        let err = backend.complete(&endpoint(), &with_prefill).await.unwrap_err();
        assert!(matches!(err, Error::PrefillUnsupported { .. }));
        let ok = backend.complete(&endpoint(), &request("m", "t", "q")).await.unwrap();
        assert_eq!(ok.output_text, "plain");
    }

    #[tokio::test]
    async fn scripted_failures_map_to_errors() {
        let backend = MockBackend::new(MockScript {
            entries: vec![
                MockEntry {
                    rule: MatchRule { tag: Some("t1".into()), ..Default::default() },
                    fail: Some("timeout".into()),
                    ..Default::default()
                },
                MockEntry {
                    rule: MatchRule { tag: Some("t2".into()), ..Default::default() },
                    fail: Some("http:500".into()),
                    ..Default::default()
                },
            ],
        });
        assert!(matches!(
            backend.complete(&endpoint(), &request("m", "t1", "q")).await.unwrap_err(),
            Error::Timeout { .. }
        ));
        assert!(matches!(
            backend.complete(&endpoint(), &request("m", "t2", "q")).await.unwrap_err(),
            Error::HttpStatus { status: 500, .. }
        ));
    }
}
