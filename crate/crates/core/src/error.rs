//! Error types shared across the engine.

use thiserror::Error;

/// One configuration violation, addressed by field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigViolation {
    /// Dotted path of the offending field, e.g. `prompt_templates.expand_stage2`.
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// Config validation reports every violation found, not just the first.
    #[error("invalid configuration ({} violation(s)):\n{}", .0.len(), format_violations(.0))]
    Config(Vec<ConfigViolation>),

    #[error("dataset {path}, line {line}: {message}")]
    MalformedDatasetLine {
        path: String,
        line: usize,
        message: String,
    },

    #[error("dataset {path}: duplicate problem id `{id}`")]
    DuplicateProblemId { path: String, id: String },

    #[error("dataset {path}: registered tag `{tag}` expects {expected} problems, found {actual}")]
    DatasetCountMismatch {
        path: String,
        tag: String,
        expected: usize,
        actual: usize,
    },

    #[error("run store: duplicate outcome key `{key}`")]
    DuplicateOutcomeKey { key: String },

    #[error("run store {path}, line {line}: {message}")]
    CorruptStoreLine {
        path: String,
        line: usize,
        message: String,
    },

    #[error("endpoint {url}: HTTP {status}: {excerpt}")]
    HttpStatus {
        url: String,
        status: u16,
        excerpt: String,
    },

    #[error("endpoint {url}: request failed after {attempts} attempt(s): {message}")]
    Network {
        url: String,
        attempts: u32,
        message: String,
        /// True when the failure was a connection-level error (endpoint unreachable).
        connect: bool,
    },

    #[error("endpoint {url}: timed out after {secs} s")]
    Timeout { url: String, secs: u64 },

    #[error("model {model}: assistant prefill is not supported by this endpoint")]
    PrefillUnsupported { model: String },

    #[error("auth env var `{var}` is named in config but not set")]
    MissingAuthEnv { var: String },

    #[error("endpoint {url}: malformed response: {message}")]
    BadResponse { url: String, message: String },

    #[error("invalid completion request: {0}")]
    InvalidRequest(String),

    #[error("mock script: no entry matches request (model={model}, tag={tag})")]
    MockNoMatch { model: String, tag: String },

    #[error("mock script: request (model={model}, tag={tag}) matches entries {indexes:?}; match rules must be unambiguous")]
    MockAmbiguous {
        model: String,
        tag: String,
        indexes: Vec<usize>,
    },

    #[error("mock script: scripted failure for entry {index}: {message}")]
    MockScriptedFailure { index: usize, message: String },

    #[error("strategy {strategy}, problem {problem_id}: {source}")]
    Strategy {
        strategy: String,
        problem_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("problem {problem_id}: all {n} candidates failed")]
    AllCandidatesFailed { problem_id: String, n: usize },

    #[error("prefix length {k} out of range 1..={max}")]
    PrefixOutOfRange { k: usize, max: usize },

    #[error("invalid marker pattern `{pattern}`: {message}")]
    InvalidMarkerPattern { pattern: String, message: String },

    #[error("metric input: {0}")]
    MetricInput(String),

    #[error("win rate: block `{block}` is missing a `{strategy}` cell")]
    MissingCell { block: String, strategy: String },

    #[error("aggregate delta: no matching pair for ({model}, {dataset})")]
    UnpairedRow { model: String, dataset: String },

    #[error("report: {0}")]
    Report(String),

    #[error("problem coverage mismatch: {0}")]
    CoverageMismatch(String),

    #[error("problem {problem_id}: no stored thinking trace with think tags")]
    MissingTrace { problem_id: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {message}")]
    Serde { context: String, message: String },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn serde(context: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Error::Serde {
            context: context.into(),
            message: err.to_string(),
        }
    }

    /// Attach strategy/problem context to an inference failure.
    pub fn in_strategy(self, strategy: &str, problem_id: &str) -> Self {
        Error::Strategy {
            strategy: strategy.to_string(),
            problem_id: problem_id.to_string(),
            source: Box::new(self),
        }
    }

    /// True for connection-level failures where nothing was served at all.
    pub fn is_connectivity(&self) -> bool {
        match self {
            Error::Network { connect, .. } => *connect,
            Error::Strategy { source, .. } => source.is_connectivity(),
            _ => false,
        }
    }
}

fn format_violations(violations: &[ConfigViolation]) -> String {
    violations
        .iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;
