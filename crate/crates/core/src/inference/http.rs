//! OpenAI-compatible HTTP backend.
//!
//! Requests go to `{base_url}/chat/completions` as JSON; auth is a bearer
//! token from the environment variable named in config. Network failures
//! and 5xx responses are retried with exponential backoff; timeouts and 4xx
//! are not. A prefill travels as a trailing assistant message together with
//! `continue_final_message`, the continuation convention of
//! OpenAI-compatible servers.

use serde::Deserialize;
use serde_json::{json, Value};

use crate::domain::TokenSource;
use crate::error::{Error, Result};

use super::{fallback_token_estimate, CompletionRequest, CompletionResult, Endpoint};

/// Build the JSON request body. Endpoint extra fields are merged last and
/// may override anything, which is how model-specific switches (e.g. a
/// hybrid model's thinking-mode flag) pass through opaquely.
pub fn build_request_body(endpoint: &Endpoint, request: &CompletionRequest) -> Value {
    let mut messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| {
            json!({
                "role": match m.role {
                    crate::domain::ChatRole::System => "system",
                    crate::domain::ChatRole::User => "user",
                    crate::domain::ChatRole::Assistant => "assistant",
                },
                "content": m.content,
            })
        })
        .collect();
    if let Some(prefill) = &request.prefill_text {
        messages.push(json!({"role": "assistant", "content": prefill}));
    }

    let mut body = serde_json::Map::new();
    body.insert("model".into(), json!(request.model_name));
    body.insert("messages".into(), Value::Array(messages));
    body.insert("temperature".into(), json!(request.sampling.temperature));
    body.insert("top_p".into(), json!(request.sampling.top_p));
    body.insert("max_tokens".into(), json!(request.sampling.max_tokens));
    if request.prefill_text.is_some() {
        body.insert("continue_final_message".into(), json!(true));
        body.insert("add_generation_prompt".into(), json!(false));
    }
    for (k, v) in &endpoint.extra_request_fields {
        body.insert(k.clone(), v.clone());
    }
    Value::Object(body)
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

pub struct HttpBackend {
    client: reqwest::Client,
}

impl HttpBackend {
    pub fn new(timeout: std::time::Duration) -> Result<Self> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Network {
                url: String::new(),
                attempts: 0,
                message: format!("building HTTP client: {e}"),
                connect: false,
            })?;
        Ok(HttpBackend { client })
    }

    pub async fn complete(
        &self,
        endpoint: &Endpoint,
        request: &CompletionRequest,
    ) -> Result<CompletionResult> {
        let url = format!("{}/chat/completions", endpoint.base_url);
        let body = build_request_body(endpoint, request);
        let started = std::time::Instant::now();

        let mut last_err: Option<Error> = None;
        for attempt in 0..=endpoint.retries {
            if attempt > 0 {
                let backoff = endpoint.backoff * 2u32.pow(attempt - 1);
                tokio::time::sleep(backoff).await;
            }
            let mut builder = self
                .client
                .post(&url)
                .header("x-request-tag", &request.request_tag)
                .json(&body);
            if let Some(token) = &endpoint.bearer_token {
                builder = builder.bearer_auth(token);
            }
            match builder.send().await {
                Err(e) => {
                    if e.is_connect() {
                        last_err = Some(Error::Network {
                            url: url.clone(),
                            attempts: attempt + 1,
                            message: e.to_string(),
                            connect: true,
                        });
                        continue; // retryable
                    }
                    if e.is_timeout() {
                        return Err(Error::Timeout {
                            url: url.clone(),
                            secs: endpoint.timeout.as_secs(),
                        });
                    }
                    last_err = Some(Error::Network {
                        url: url.clone(),
                        attempts: attempt + 1,
                        message: e.to_string(),
                        connect: false,
                    });
                    continue;
                }
                Ok(response) => {
                    let status = response.status();
                    if status.is_server_error() {
                        let excerpt = body_excerpt(response).await;
                        last_err = Some(Error::HttpStatus {
                            url: url.clone(),
                            status: status.as_u16(),
                            excerpt,
                        });
                        continue; // retryable
                    }
                    if !status.is_success() {
                        let excerpt = body_excerpt(response).await;
                        return Err(Error::HttpStatus {
                            url,
                            status: status.as_u16(),
                            excerpt,
                        });
                    }
                    let wire: WireResponse = response.json().await.map_err(|e| {
                        Error::BadResponse { url: url.clone(), message: e.to_string() }
                    })?;
                    return finish(endpoint, request, wire, &url, started.elapsed());
                }
            }
        }
        Err(last_err.unwrap_or(Error::Network {
            url,
            attempts: endpoint.retries + 1,
            message: "exhausted retries".into(),
            connect: false,
        }))
    }
}

fn finish(
    _endpoint: &Endpoint,
    request: &CompletionRequest,
    wire: WireResponse,
    url: &str,
    elapsed: std::time::Duration,
) -> Result<CompletionResult> {
    let choice = wire.choices.into_iter().next().ok_or_else(|| Error::BadResponse {
        url: url.to_string(),
        message: "response carried no choices".into(),
    })?;
    let mut output = choice.message.content.unwrap_or_default();
    // Some servers echo the prefill back at the start of the continuation.
    if let Some(prefill) = &request.prefill_text {
        if let Some(stripped) = output.strip_prefix(prefill.as_str()) {
            output = stripped.to_string();
        }
    }
    let usage_completion = wire.usage.as_ref().and_then(|u| u.completion_tokens);
    let (completion_tokens, token_source) = match usage_completion {
        Some(n) => (n, TokenSource::ServerUsage),
        None => (fallback_token_estimate(&output), TokenSource::FallbackEstimate),
    };
    let prompt_tokens = wire
        .usage
        .as_ref()
        .and_then(|u| u.prompt_tokens)
        .unwrap_or_else(|| {
            let joined: usize = request.messages.iter().map(|m| m.content.len()).sum();
            (joined as u64).div_ceil(4)
        });
    Ok(CompletionResult {
        output_text: output,
        completion_tokens,
        prompt_tokens,
        token_source,
        latency_ms: elapsed.as_millis() as u64,
    })
}

async fn body_excerpt(response: reqwest::Response) -> String {
    const LIMIT: usize = 400;
    match response.text().await {
        Ok(mut text) => {
            if text.len() > LIMIT {
                let mut cut = LIMIT;
                while !text.is_char_boundary(cut) {
                    cut -= 1;
                }
                text.truncate(cut);
                text.push('…');
            }
            text
        }
        Err(_) => "<unreadable body>".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ChatMessage, ModelRole};
    use crate::inference::RequestSampling;

    fn endpoint() -> Endpoint {
        Endpoint {
            base_url: "http://localhost:1/v1".into(),
            model_name: "m".into(),
            role: ModelRole::Thinking,
            bearer_token: None,
            supports_prefill: true,
            extra_request_fields: [(
                "chat_template_kwargs".to_string(),
                serde_json::json!({"enable_thinking": false}),
            )]
            .into_iter()
            .collect(),
            timeout: std::time::Duration::from_secs(5),
            retries: 0,
            backoff: std::time::Duration::from_millis(1),
        }
    }

    #[test]
    fn body_includes_sampling_and_extra_fields() {
        let req = CompletionRequest {
            model_name: "m".into(),
            messages: vec![ChatMessage::user("solve it")],
            prefill_text: None,
            sampling: RequestSampling { temperature: 0.7, top_p: 0.9, max_tokens: 128 },
            request_tag: "t".into(),
        };
        let body = build_request_body(&endpoint(), &req);
        assert_eq!(body["model"], "m");
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["top_p"], 0.9);
        assert_eq!(body["max_tokens"], 128);
        assert_eq!(body["chat_template_kwargs"]["enable_thinking"], false);
        assert!(body.get("continue_final_message").is_none());
    }

    #[test]
    fn prefill_becomes_trailing_assistant_message() {
        let req = CompletionRequest {
            model_name: "m".into(),
            messages: vec![ChatMessage::user("solve it")],
            prefill_text: Some("<think>\ndone\n</think>\n".into()),
            sampling: RequestSampling { temperature: 0.0, top_p: 1.0, max_tokens: 16 },
            request_tag: "t".into(),
        };
        let body = build_request_body(&endpoint(), &req);
        let messages = body["messages"].as_array().unwrap();
        assert_eq!(messages.len(), 2);
        assert_eq!(messages[1]["role"], "assistant");
        assert_eq!(messages[1]["content"], "<think>\ndone\n</think>\n");
        assert_eq!(body["continue_final_message"], true);
        assert_eq!(body["add_generation_prompt"], false);
    }
}
