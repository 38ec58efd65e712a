//! Run configuration: TOML schema, defaults, and validation.
//!
//! `validate_config` collects every violation it finds instead of stopping at
//! the first, so a bad config file can be fixed in one pass. Secrets are
//! referenced by environment-variable name only and never stored inline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::ModelRole;
use crate::error::{ConfigViolation, Error, Result};

/// Default episode boundary markers. A pragmatic starter set: override
/// `episode_markers` in the config to match your models' phrasing.
pub const DEFAULT_EPISODE_MARKERS: &[&str] = &[
    "let me verify",
    "on second thought",
    "wait,",
    "let me double-check",
    "alternatively,",
];

pub const DEFAULT_THINK_OPEN: &str = "<think>";
pub const DEFAULT_THINK_CLOSE: &str = "</think>";

/// Assistant prefill that skips the think phase.
pub const DEFAULT_NO_THINKING_PREFILL: &str =
    "<think>\nOkay, I think I have finished thinking.\n</think>\n";

pub const DEFAULT_SOLO_TEMPLATE: &str =
    "Solve the following problem. Put your final answer in \\boxed{}.\n\n{problem}";

pub const DEFAULT_OUTLINE_STAGE1_TEMPLATE: &str = "{problem}\n\nProvide a concise numbered \
outline of the solution approach. Do not compute the final answer.";

pub const DEFAULT_EXPAND_STAGE2_TEMPLATE: &str = "{problem}\n\nA draft outline follows. Verify \
each step, correct it if needed, and produce the complete solution with the final answer \
boxed.\n\nOutline:\n{outline}";

pub const DEFAULT_PREFIX_COMPLETION_TEMPLATE: &str = "{problem}\n\nPartial reasoning:\n\
{episodes}\n\nContinue from the reasoning above and finish the solution. Put the final answer \
in \\boxed{}.";

/// Default generation caps per model role.
pub const DEFAULT_MAX_NEW_TOKENS_INSTRUCT: u32 = 4096;
pub const DEFAULT_MAX_NEW_TOKENS_THINKING: u32 = 16384;

/// One chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Base URL including the API prefix, e.g. `http://host:8000/v1`.
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env_var: Option<String>,
    /// Per-endpoint generation cap; falls back to the role default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_new_tokens: Option<u32>,
    /// Whether the server accepts a trailing assistant message as a prefill.
    #[serde(default = "default_true")]
    pub supports_prefill: bool,
    /// Opaque key/value pairs merged into every request body, e.g. the
    /// flag toggling a hybrid model's thinking mode.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra_request_fields: BTreeMap<String, serde_json::Value>,
}

fn default_true() -> bool {
    true
}

impl EndpointConfig {
    /// Generation cap for this endpoint given its role and the global
    /// sampling override.
    pub fn effective_max_new_tokens(&self, role: ModelRole, sampling: &SamplingParams) -> u32 {
        self.max_new_tokens
            .or(sampling.max_new_tokens)
            .unwrap_or(match role {
                ModelRole::Instruct => DEFAULT_MAX_NEW_TOKENS_INSTRUCT,
                ModelRole::Thinking => DEFAULT_MAX_NEW_TOKENS_THINKING,
            })
    }
}

/// Sampling parameters forwarded to the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    /// Global cap; when absent, per-role defaults apply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_new_tokens: Option<u32>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        // Single-sample greedy.
        SamplingParams { temperature: 0.0, top_p: 1.0, max_new_tokens: None }
    }
}

/// Prompt templates for every strategy. Placeholders: `{problem}`,
/// `{outline}`, `{episodes}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplateSet {
    pub solo: String,
    /// Prefill text, not a prompt; sent as the start of the assistant turn.
    pub no_thinking_prefill: String,
    /// Must instruct outline-only output (no final answer).
    pub outline_stage1: String,
    /// Must embed `{outline}`.
    pub expand_stage2: String,
    pub prefix_completion: String,
}

impl Default for PromptTemplateSet {
    fn default() -> Self {
        PromptTemplateSet {
            solo: DEFAULT_SOLO_TEMPLATE.to_string(),
            no_thinking_prefill: DEFAULT_NO_THINKING_PREFILL.to_string(),
            outline_stage1: DEFAULT_OUTLINE_STAGE1_TEMPLATE.to_string(),
            expand_stage2: DEFAULT_EXPAND_STAGE2_TEMPLATE.to_string(),
            prefix_completion: DEFAULT_PREFIX_COMPLETION_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplateSet {
    /// (name, text) pairs, in a stable order.
    pub fn named(&self) -> [(&'static str, &str); 5] {
        [
            ("solo", &self.solo),
            ("no_thinking_prefill", &self.no_thinking_prefill),
            ("outline_stage1", &self.outline_stage1),
            ("expand_stage2", &self.expand_stage2),
            ("prefix_completion", &self.prefix_completion),
        ]
    }
}

/// HTTP client behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpParams {
    pub timeout_secs: u64,
    /// Retries after the initial attempt, for network failures and 5xx.
    pub retries: u32,
    /// Base backoff; doubled per retry.
    pub backoff_ms: u64,
}

impl Default for HttpParams {
    fn default() -> Self {
        HttpParams { timeout_secs: 600, retries: 3, backoff_ms: 250 }
    }
}

/// Fully validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub instruct_endpoint: EndpointConfig,
    pub thinking_endpoint: EndpointConfig,
    pub sampling: SamplingParams,
    /// Candidate count for Best-of-N.
    pub best_of_n: u32,
    /// Stage-1 outline generation cap.
    pub outline_max_tokens: u32,
    pub episode_markers: Vec<String>,
    pub think_tag_open: String,
    pub think_tag_close: String,
    pub prompt_templates: PromptTemplateSet,
    /// Maximum requests in flight at any instant.
    pub concurrency_limit: usize,
    /// Default parent directory for run outputs.
    pub cache_dir: PathBuf,
    /// Dataset tag -> problem JSONL path.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub datasets: BTreeMap<String, PathBuf>,
    pub http: HttpParams,
    /// When set, both endpoints are served by the scripted in-process mock
    /// loaded from this file; no network access happens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<PathBuf>,
}

impl RunConfig {
    pub fn endpoint(&self, role: ModelRole) -> &EndpointConfig {
        match role {
            ModelRole::Instruct => &self.instruct_endpoint,
            ModelRole::Thinking => &self.thinking_endpoint,
        }
    }
}

/// Raw, permissive form of the config file: everything optional so that
/// validation can report all problems at once.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub instruct_endpoint: Option<RawEndpoint>,
    pub thinking_endpoint: Option<RawEndpoint>,
    pub sampling: Option<RawSampling>,
    pub best_of_n: Option<u32>,
    pub outline_max_tokens: Option<u32>,
    pub episode_markers: Option<Vec<String>>,
    pub think_tag_open: Option<String>,
    pub think_tag_close: Option<String>,
    pub prompt_templates: Option<RawTemplates>,
    pub concurrency_limit: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub datasets: Option<BTreeMap<String, PathBuf>>,
    pub http: Option<RawHttp>,
    pub mock: Option<RawMock>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEndpoint {
    pub base_url: Option<String>,
    pub model_name: Option<String>,
    pub auth_env_var: Option<String>,
    pub max_new_tokens: Option<u32>,
    pub supports_prefill: Option<bool>,
    pub extra_request_fields: Option<BTreeMap<String, serde_json::Value>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSampling {
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_new_tokens: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTemplates {
    pub solo: Option<String>,
    pub no_thinking_prefill: Option<String>,
    pub outline_stage1: Option<String>,
    pub expand_stage2: Option<String>,
    pub prefix_completion: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHttp {
    pub timeout_secs: Option<u64>,
    pub retries: Option<u32>,
    pub backoff_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMock {
    pub script: Option<PathBuf>,
}

/// Parse a TOML config file and validate it.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
    let raw: RawConfig = toml::from_str(&text).map_err(|e| {
        Error::Config(vec![ConfigViolation {
            field: "<file>".into(),
            message: format!("TOML parse error: {e}"),
        }])
    })?;
    validate_config(raw)
}

/// Validate a parsed config document, returning either a complete
/// `RunConfig` or the full list of violations.
pub fn validate_config(raw: RawConfig) -> Result<RunConfig> {
    let mut violations = Vec::new();

    let instruct_endpoint =
        validate_endpoint(raw.instruct_endpoint, "instruct_endpoint", &mut violations);
    let thinking_endpoint =
        validate_endpoint(raw.thinking_endpoint, "thinking_endpoint", &mut violations);

    let raw_sampling = raw.sampling.unwrap_or_default();
    let sampling = SamplingParams {
        temperature: raw_sampling.temperature.unwrap_or(0.0),
        top_p: raw_sampling.top_p.unwrap_or(1.0),
        max_new_tokens: raw_sampling.max_new_tokens,
    };
    if sampling.temperature < 0.0 {
        violations.push(violation("sampling.temperature", "must be >= 0"));
    }
    if !(sampling.top_p > 0.0 && sampling.top_p <= 1.0) {
        violations.push(violation("sampling.top_p", "must be in (0, 1]"));
    }
    if sampling.max_new_tokens == Some(0) {
        violations.push(violation("sampling.max_new_tokens", "must be positive"));
    }

    let best_of_n = raw.best_of_n.unwrap_or(5);
    if best_of_n < 1 {
        violations.push(violation("best_of_n", "must be >= 1"));
    }

    let outline_max_tokens = raw.outline_max_tokens.unwrap_or(512);
    if outline_max_tokens < 1 {
        violations.push(violation("outline_max_tokens", "must be >= 1"));
    }

    let concurrency_limit = raw.concurrency_limit.unwrap_or(4);
    if concurrency_limit < 1 {
        violations.push(violation("concurrency_limit", "must be >= 1"));
    }

    let episode_markers: Vec<String> = raw
        .episode_markers
        .unwrap_or_else(|| DEFAULT_EPISODE_MARKERS.iter().map(|s| s.to_string()).collect());
    for (i, pattern) in episode_markers.iter().enumerate() {
        match crate::trace::compile_marker(pattern) {
            Ok(re) => {
                if re.is_match("") {
                    violations.push(violation(
                        &format!("episode_markers[{i}]"),
                        &format!("pattern `{pattern}` matches the empty string"),
                    ));
                }
            }
            Err(e) => violations.push(violation(&format!("episode_markers[{i}]"), &e.to_string())),
        }
    }

    let think_tag_open = raw.think_tag_open.unwrap_or_else(|| DEFAULT_THINK_OPEN.to_string());
    let think_tag_close = raw.think_tag_close.unwrap_or_else(|| DEFAULT_THINK_CLOSE.to_string());
    if think_tag_open.is_empty() {
        violations.push(violation("think_tag_open", "must be non-empty"));
    }
    if think_tag_close.is_empty() {
        violations.push(violation("think_tag_close", "must be non-empty"));
    }
    if !think_tag_open.is_empty() && think_tag_open == think_tag_close {
        violations.push(violation("think_tag_close", "must differ from think_tag_open"));
    }

    let defaults = PromptTemplateSet::default();
    let raw_templates = raw.prompt_templates.unwrap_or_default();
    let prompt_templates = PromptTemplateSet {
        solo: raw_templates.solo.unwrap_or(defaults.solo),
        no_thinking_prefill: raw_templates.no_thinking_prefill.unwrap_or(defaults.no_thinking_prefill),
        outline_stage1: raw_templates.outline_stage1.unwrap_or(defaults.outline_stage1),
        expand_stage2: raw_templates.expand_stage2.unwrap_or(defaults.expand_stage2),
        prefix_completion: raw_templates.prefix_completion.unwrap_or(defaults.prefix_completion),
    };
    require_placeholder(&prompt_templates.solo, "{problem}", "prompt_templates.solo", &mut violations);
    require_placeholder(
        &prompt_templates.outline_stage1,
        "{problem}",
        "prompt_templates.outline_stage1",
        &mut violations,
    );
    for needed in ["{problem}", "{outline}"] {
        require_placeholder(
            &prompt_templates.expand_stage2,
            needed,
            "prompt_templates.expand_stage2",
            &mut violations,
        );
    }
    for needed in ["{problem}", "{episodes}"] {
        require_placeholder(
            &prompt_templates.prefix_completion,
            needed,
            "prompt_templates.prefix_completion",
            &mut violations,
        );
    }

    let raw_http = raw.http.unwrap_or_default();
    let http = HttpParams {
        timeout_secs: raw_http.timeout_secs.unwrap_or(600),
        retries: raw_http.retries.unwrap_or(3),
        backoff_ms: raw_http.backoff_ms.unwrap_or(250),
    };
    if http.timeout_secs == 0 {
        violations.push(violation("http.timeout_secs", "must be >= 1"));
    }

    if let Some(datasets) = &raw.datasets {
        for tag in datasets.keys() {
            if let Err(e) = crate::domain::DatasetTag::parse(tag) {
                violations.push(violation(&format!("datasets.{tag}"), &e));
            }
        }
    }

    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }

    Ok(RunConfig {
        instruct_endpoint: instruct_endpoint.expect("validated"),
        thinking_endpoint: thinking_endpoint.expect("validated"),
        sampling,
        best_of_n,
        outline_max_tokens,
        episode_markers,
        think_tag_open,
        think_tag_close,
        prompt_templates,
        concurrency_limit,
        cache_dir: raw.cache_dir.unwrap_or_else(|| PathBuf::from("runs")),
        datasets: raw.datasets.unwrap_or_default(),
        http,
        mock_script: raw.mock.and_then(|m| m.script),
    })
}

fn validate_endpoint(
    raw: Option<RawEndpoint>,
    field: &str,
    violations: &mut Vec<ConfigViolation>,
) -> Option<EndpointConfig> {
    let Some(raw) = raw else {
        violations.push(violation(field, "missing endpoint section"));
        return None;
    };
    let mut ok = true;
    if raw.base_url.as_deref().is_none_or(str::is_empty) {
        violations.push(violation(&format!("{field}.base_url"), "must be set and non-empty"));
        ok = false;
    }
    if raw.model_name.as_deref().is_none_or(str::is_empty) {
        violations.push(violation(&format!("{field}.model_name"), "must be set and non-empty"));
        ok = false;
    }
    if raw.max_new_tokens == Some(0) {
        violations.push(violation(&format!("{field}.max_new_tokens"), "must be positive"));
        ok = false;
    }
    if !ok {
        return None;
    }
    Some(EndpointConfig {
        base_url: raw.base_url.unwrap(),
        model_name: raw.model_name.unwrap(),
        auth_env_var: raw.auth_env_var,
        max_new_tokens: raw.max_new_tokens,
        supports_prefill: raw.supports_prefill.unwrap_or(true),
        extra_request_fields: raw.extra_request_fields.unwrap_or_default(),
    })
}

fn require_placeholder(
    template: &str,
    placeholder: &str,
    field: &str,
    violations: &mut Vec<ConfigViolation>,
) {
    if !template.contains(placeholder) {
        violations.push(violation(field, &format!("template lacks the `{placeholder}` placeholder")));
    }
}

fn violation(field: &str, message: &str) -> ConfigViolation {
    ConfigViolation { field: field.to_string(), message: message.to_string() }
}
