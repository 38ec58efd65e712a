//! Shared domain types: problems, generation records, strategy outcomes, and
//! the aggregate rows consumed by reporting.
//!
//! All types are immutable-after-construction values; workers exchange them
//! freely without shared mutable state.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Benchmark dataset tag. Registered tags carry a fixed expected size;
/// everything else must use `custom:<name>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DatasetTag {
    Gsm8k,
    Math500,
    Aime24,
    Custom(String),
}

impl DatasetTag {
    /// Expected problem count for registered datasets; `None` for custom tags.
    pub fn registered_size(&self) -> Option<usize> {
        match self {
            DatasetTag::Gsm8k => Some(1319),
            DatasetTag::Math500 => Some(500),
            DatasetTag::Aime24 => Some(30),
            DatasetTag::Custom(_) => None,
        }
    }

    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "gsm8k" => Ok(DatasetTag::Gsm8k),
            "math500" => Ok(DatasetTag::Math500),
            "aime24" => Ok(DatasetTag::Aime24),
            other => match other.strip_prefix("custom:") {
                Some(name) if !name.is_empty() => Ok(DatasetTag::Custom(name.to_string())),
                _ => Err(format!(
                    "unknown dataset tag `{other}` (expected gsm8k, math500, aime24, or custom:<name>)"
                )),
            },
        }
    }
}

impl std::fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetTag::Gsm8k => write!(f, "gsm8k"),
            DatasetTag::Math500 => write!(f, "math500"),
            DatasetTag::Aime24 => write!(f, "aime24"),
            DatasetTag::Custom(name) => write!(f, "custom:{name}"),
        }
    }
}

impl Serialize for DatasetTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DatasetTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        DatasetTag::parse(&raw).map_err(serde::de::Error::custom)
    }
}

impl std::str::FromStr for DatasetTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DatasetTag::parse(s)
    }
}

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub dataset: DatasetTag,
    pub statement: String,
    pub gold_answer: String,
}

/// Which role a model plays in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Instruct,
    Thinking,
}

impl std::fmt::Display for ModelRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelRole::Instruct => write!(f, "instruct"),
            ModelRole::Thinking => write!(f, "thinking"),
        }
    }
}

/// Chat message role on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

/// One chat message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::Assistant, content: content.into() }
    }
}

/// Provenance of a token count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSource {
    /// The server returned a usage block; counts are authoritative.
    ServerUsage,
    /// The server omitted usage; counts are `ceil(bytes / 4)` estimates.
    FallbackEstimate,
}

/// One inference call, as stored in run artifacts.
///
/// `output_text` starts after `prefill_text` when a prefill was used; the
/// prefill is fixed input, never counted as generated tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub call_id: String,
    pub model_name: String,
    pub role_of_model: ModelRole,
    pub request_messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefill_text: Option<String>,
    pub output_text: String,
    pub completion_tokens: u64,
    pub prompt_tokens: u64,
    pub token_source: TokenSource,
    pub timestamp: DateTime<Utc>,
}

/// Generation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SoloThinking,
    NoThinking,
    BestOfN,
    Cothink,
    PrefixCompletion,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::SoloThinking,
        Strategy::NoThinking,
        Strategy::BestOfN,
        Strategy::Cothink,
        Strategy::PrefixCompletion,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::SoloThinking => "solo_thinking",
            Strategy::NoThinking => "no_thinking",
            Strategy::BestOfN => "best_of_n",
            Strategy::Cothink => "cothink",
            Strategy::PrefixCompletion => "prefix_completion",
        }
    }

    pub fn parse(s: &str) -> Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "solo_thinking" | "solo" => Ok(Strategy::SoloThinking),
            "no_thinking" => Ok(Strategy::NoThinking),
            "best_of_n" => Ok(Strategy::BestOfN),
            "cothink" => Ok(Strategy::Cothink),
            "prefix_completion" => Ok(Strategy::PrefixCompletion),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::parse(s)
    }
}

/// Verdict on the final answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    /// No candidate answer could be extracted. Scored as not correct.
    Unverifiable,
}

/// Prefix-completion bookkeeping: how much of the source trace was consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixInfo {
    /// Number of leading episodes embedded in the prompt.
    pub k: usize,
    /// Episodes in the source trace.
    pub source_episodes: usize,
    /// k / source_episodes.
    pub fraction_episodes: f64,
    /// Estimated token share of the embedded episodes (byte/4 estimator).
    pub fraction_tokens: f64,
}

/// Per-problem result of one strategy, with complete cost accounting.
///
/// `total_generated_tokens` is always the sum of `completion_tokens` over
/// `calls` — intermediate generations (discarded candidates, outlines)
/// included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub problem_id: String,
    pub strategy: Strategy,
    pub calls: Vec<GenerationRecord>,
    pub total_generated_tokens: u64,
    pub final_answer_text: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_count: Option<u32>,
    /// Index into `calls` of the answer-producing call, when it is not the
    /// last one (Best-of-N selection).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_call: Option<usize>,
    /// Set when a CoThink outline came back empty; stage 2 still ran.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty_outline: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix: Option<PrefixInfo>,
    /// Error strings for candidates that failed but did not abort the run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_candidates: Vec<String>,
}

impl StrategyOutcome {
    /// Sum of completion tokens over all constituent calls.
    pub fn summed_tokens(&self) -> u64 {
        self.calls.iter().map(|c| c.completion_tokens).sum()
    }

    /// The call whose output carries the final answer.
    pub fn answer_call(&self) -> Option<&GenerationRecord> {
        match self.selected_call {
            Some(i) => self.calls.get(i),
            None => self.calls.last(),
        }
    }

    /// Check the structural invariants every constructed outcome must satisfy.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.calls.is_empty() {
            return Err(format!("outcome {}: calls is empty", self.problem_id));
        }
        if self.total_generated_tokens != self.summed_tokens() {
            return Err(format!(
                "outcome {}: total_generated_tokens {} != sum over calls {}",
                self.problem_id,
                self.total_generated_tokens,
                self.summed_tokens()
            ));
        }
        if let Some(i) = self.selected_call {
            if i >= self.calls.len() {
                return Err(format!("outcome {}: selected_call {} out of range", self.problem_id, i));
            }
        }
        Ok(())
    }
}

/// Aggregate metrics for one (model, strategy, dataset) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub model_label: String,
    pub strategy: Strategy,
    pub dataset: DatasetTag,
    /// Pass@1 in percent, 0..=100.
    pub pass_at_1_pct: f64,
    /// Mean generated tokens per problem.
    pub mean_tokens: f64,
    /// 100 * pass_at_1_pct / mean_tokens: accuracy points per 100 tokens.
    pub token_efficiency: f64,
    /// Percent of the baseline row's token efficiency; present only when a
    /// baseline row is designated for the dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_efficiency_pct: Option<f64>,
}

/// Exponent convention for the scaling reference curve.
///
/// Both readings of the hypothesized law are exposed; callers must pick one
/// explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentConvention {
    /// reference = 100 * ratio^beta
    Beta,
    /// reference = 100 * ratio^(beta - 1)
    BetaMinusOne,
}

impl std::fmt::Display for ExponentConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExponentConvention::Beta => write!(f, "beta"),
            ExponentConvention::BetaMinusOne => write!(f, "beta_minus_one"),
        }
    }
}

impl std::str::FromStr for ExponentConvention {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "beta" => Ok(ExponentConvention::Beta),
            "beta_minus_one" => Ok(ExponentConvention::BetaMinusOne),
            other => Err(format!("unknown exponent convention `{other}`")),
        }
    }
}

/// Parameters of the sub-linear quality/cost reference curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    /// Scaling exponent, strictly inside (0, 1).
    pub exponent_beta: f64,
    pub exponent_convention: ExponentConvention,
}

impl ScalingParams {
    pub fn new(exponent_beta: f64, exponent_convention: ExponentConvention) -> Result<Self, String> {
        if !(exponent_beta > 0.0 && exponent_beta < 1.0) {
            return Err(format!(
                "exponent_beta must be strictly between 0 and 1, got {exponent_beta}"
            ));
        }
        Ok(ScalingParams { exponent_beta, exponent_convention })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(tokens: u64) -> GenerationRecord {
        GenerationRecord {
            call_id: "c1".into(),
            model_name: "m".into(),
            role_of_model: ModelRole::Thinking,
            request_messages: vec![ChatMessage::user("q")],
            prefill_text: None,
            output_text: "a".into(),
            completion_tokens: tokens,
            prompt_tokens: 3,
            token_source: TokenSource::ServerUsage,
            timestamp: Utc::now(),
        }
    }

    #[test]
    fn dataset_tag_round_trips_through_display() {
        for tag in [
            DatasetTag::Gsm8k,
            DatasetTag::Math500,
            DatasetTag::Aime24,
            DatasetTag::Custom("smoke".into()),
        ] {
            assert_eq!(DatasetTag::parse(&tag.to_string()).unwrap(), tag);
        }
        assert!(DatasetTag::parse("gsm9k").is_err());
        assert!(DatasetTag::parse("custom:").is_err());
    }

    #[test]
    fn registered_sizes() {
        assert_eq!(DatasetTag::Gsm8k.registered_size(), Some(1319));
        assert_eq!(DatasetTag::Math500.registered_size(), Some(500));
        assert_eq!(DatasetTag::Aime24.registered_size(), Some(30));
        assert_eq!(DatasetTag::Custom("x".into()).registered_size(), None);
    }

    #[test]
    fn outcome_invariant_checks_token_sum() {
        let mut outcome = StrategyOutcome {
            problem_id: "p1".into(),
            strategy: Strategy::Cothink,
            calls: vec![record(10), record(20)],
            total_generated_tokens: 30,
            final_answer_text: "42".into(),
            verdict: Verdict::Correct,
            episode_count: None,
            selected_call: None,
            empty_outline: false,
            prefix: None,
            failed_candidates: vec![],
        };
        assert!(outcome.check_invariants().is_ok());
        outcome.total_generated_tokens = 31;
        assert!(outcome.check_invariants().is_err());
        outcome.total_generated_tokens = 30;
        outcome.calls.clear();
        assert!(outcome.check_invariants().is_err());
    }

    #[test]
    fn outcome_serde_round_trip() {
        let outcome = StrategyOutcome {
            problem_id: "p1".into(),
            strategy: Strategy::BestOfN,
            calls: vec![record(10), record(7)],
            total_generated_tokens: 17,
            final_answer_text: "1/2".into(),
            verdict: Verdict::Incorrect,
            episode_count: Some(3),
            selected_call: Some(1),
            empty_outline: false,
            prefix: None,
            failed_candidates: vec!["candidate 2: timeout".into()],
        };
        let json = serde_json::to_string(&outcome).unwrap();
        let back: StrategyOutcome = serde_json::from_str(&json).unwrap();
        assert_eq!(outcome, back);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(Strategy::parse(s.as_str()).unwrap(), s);
        }
        assert_eq!(Strategy::parse("best-of-n").unwrap(), Strategy::BestOfN);
    }

    #[test]
    fn scaling_params_bounds() {
        assert!(ScalingParams::new(0.5, ExponentConvention::Beta).is_ok());
        assert!(ScalingParams::new(0.0, ExponentConvention::Beta).is_err());
        assert!(ScalingParams::new(1.0, ExponentConvention::Beta).is_err());
    }
}
