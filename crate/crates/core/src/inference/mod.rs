//! Chat-completions inference against real endpoints or a scripted mock,
//! with retries, timeouts, and bounded parallelism.
//!
//! The in-flight bound is this module's responsibility: `Client` holds the
//! semaphore, so callers may fire requests from as many workers as they
//! like and never exceed the configured limit.

pub mod http;
pub mod mock;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use tokio::sync::Semaphore;

use crate::config::{EndpointConfig, HttpParams, SamplingParams};
use crate::domain::{ChatMessage, ChatRole, ModelRole};
use crate::error::{Error, Result};

pub use mock::{MockBackend, MockEntry, MockScript};

/// Deterministic token estimate used when the server omits a usage block:
/// `ceil(byte_length / 4)`.
pub fn fallback_token_estimate(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

/// Sampling parameters resolved for one request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RequestSampling {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

/// One chat-completions request.
///
/// `prefill_text` is an assistant continuation prefix: it is sent as a
/// trailing assistant message, is excluded from the generated output, and is
/// never counted as completion tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model_name: String,
    pub messages: Vec<ChatMessage>,
    pub prefill_text: Option<String>,
    pub sampling: RequestSampling,
    /// Stable identifier for logging, cache keying, and mock matching.
    pub request_tag: String,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(Error::InvalidRequest("messages must be non-empty".into()));
        }
        let last = self.messages.last().unwrap();
        if !matches!(last.role, ChatRole::User | ChatRole::System) {
            return Err(Error::InvalidRequest(
                "last message must have role user or system (prefill goes in prefill_text)".into(),
            ));
        }
        Ok(())
    }

    /// Content of the last user message, used by mock match rules.
    pub fn last_user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == ChatRole::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

/// Result of one completion call. `output_text` excludes any prefill.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub output_text: String,
    pub completion_tokens: u64,
    pub prompt_tokens: u64,
    pub token_source: crate::domain::TokenSource,
    pub latency_ms: u64,
}

/// Resolved endpoint descriptor: config plus the bearer token (read from the
/// named environment variable) and HTTP behavior.
#[derive(Debug, Clone)]
pub struct Endpoint {
    pub base_url: String,
    pub model_name: String,
    pub role: ModelRole,
    pub bearer_token: Option<String>,
    pub supports_prefill: bool,
    pub extra_request_fields: BTreeMap<String, serde_json::Value>,
    pub timeout: Duration,
    pub retries: u32,
    pub backoff: Duration,
}

impl Endpoint {
    pub fn from_config(cfg: &EndpointConfig, role: ModelRole, http: &HttpParams) -> Result<Self> {
        let bearer_token = match &cfg.auth_env_var {
            None => None,
            Some(var) => Some(
                std::env::var(var).map_err(|_| Error::MissingAuthEnv { var: var.clone() })?,
            ),
        };
        Ok(Endpoint {
            base_url: cfg.base_url.trim_end_matches('/').to_string(),
            model_name: cfg.model_name.clone(),
            role,
            bearer_token,
            supports_prefill: cfg.supports_prefill,
            extra_request_fields: cfg.extra_request_fields.clone(),
            timeout: Duration::from_secs(http.timeout_secs),
            retries: http.retries,
            backoff: Duration::from_millis(http.backoff_ms),
        })
    }

}

/// Resolve per-request sampling for an endpoint, honoring the per-role
/// generation caps.
pub fn resolve_sampling(
    cfg: &EndpointConfig,
    role: ModelRole,
    sampling: &SamplingParams,
) -> RequestSampling {
    RequestSampling {
        temperature: sampling.temperature,
        top_p: sampling.top_p,
        max_tokens: cfg.effective_max_new_tokens(role, sampling),
    }
}

/// Where completions actually come from.
pub enum Backend {
    Http(http::HttpBackend),
    Mock(Arc<MockBackend>),
}

impl Backend {
    async fn complete_raw(
        &self,
        endpoint: &Endpoint,
        request: &CompletionRequest,
    ) -> Result<CompletionResult> {
        match self {
            Backend::Http(b) => b.complete(endpoint, request).await,
            Backend::Mock(b) => b.complete(endpoint, request).await,
        }
    }
}

/// Completion client enforcing the in-flight bound.
pub struct Client {
    backend: Backend,
    limiter: Arc<Semaphore>,
    issued: AtomicU64,
}

impl Client {
    /// `limit` is the maximum number of requests in flight at any instant.
    pub fn new(backend: Backend, limit: usize) -> Self {
        assert!(limit >= 1, "concurrency limit must be >= 1");
        Client { backend, limiter: Arc::new(Semaphore::new(limit)), issued: AtomicU64::new(0) }
    }

    /// Total requests issued through this client.
    pub fn calls_issued(&self) -> u64 {
        self.issued.load(Ordering::SeqCst)
    }

    pub fn mock(&self) -> Option<&Arc<MockBackend>> {
        match &self.backend {
            Backend::Mock(m) => Some(m),
            Backend::Http(_) => None,
        }
    }

    /// Issue one completion. Safe to call from any number of workers; the
    /// in-flight bound is enforced here.
    pub async fn complete(
        &self,
        endpoint: &Endpoint,
        request: &CompletionRequest,
    ) -> Result<CompletionResult> {
        request.validate()?;
        if request.prefill_text.is_some() && !endpoint.supports_prefill {
            return Err(Error::PrefillUnsupported { model: endpoint.model_name.clone() });
        }
        let _permit = self.limiter.acquire().await.expect("limiter closed");
        self.issued.fetch_add(1, Ordering::SeqCst);
        self.backend.complete_raw(endpoint, request).await
    }

    /// Run a batch, returning results aligned to request order regardless of
    /// completion order. Individual failures are reported per slot without
    /// aborting the batch.
    pub async fn run_batch(
        &self,
        endpoint: &Endpoint,
        requests: &[CompletionRequest],
    ) -> Vec<Result<CompletionResult>> {
        let futures = requests.iter().map(|r| self.complete(endpoint, r));
        futures::future::join_all(futures).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fallback_estimate_is_bytes_over_four_rounded_up() {
        assert_eq!(fallback_token_estimate(""), 0);
        assert_eq!(fallback_token_estimate("abcd"), 1);
        assert_eq!(fallback_token_estimate("abcde"), 2);
        // 40 bytes -> 10 tokens
        assert_eq!(fallback_token_estimate(&"x".repeat(40)), 10);
    }

    #[test]
    fn request_validation() {
        let sampling = RequestSampling { temperature: 0.0, top_p: 1.0, max_tokens: 16 };
        let mut req = CompletionRequest {
            model_name: "m".into(),
            messages: vec![],
            prefill_text: None,
            sampling,
            request_tag: "t".into(),
        };
        assert!(req.validate().is_err());
        req.messages.push(ChatMessage::user("hi"));
        assert!(req.validate().is_ok());
        req.messages.push(ChatMessage::assistant("nope"));
        assert!(req.validate().is_err());
    }
}
