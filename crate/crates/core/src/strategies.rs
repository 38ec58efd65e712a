//! The generation protocols: solo, no-thinking, best-of-N, the two-stage
//! outline/expand pipeline, and prefix completion.
//!
//! Every outcome carries complete cost accounting: the total is the sum of
//! completion tokens over all constituent calls, discarded candidates and
//! outline tokens included.

use std::sync::Arc;

use chrono::Utc;

use crate::config::RunConfig;
use crate::domain::{
    ChatMessage, GenerationRecord, ModelRole, PrefixInfo, Problem, Strategy, StrategyOutcome,
    Verdict,
};
use crate::error::{Error, Result};
use crate::inference::{
    resolve_sampling, Client, CompletionRequest, CompletionResult, Endpoint, RequestSampling,
};
use crate::trace::{segment_episodes, split_think, Episode};
use crate::verify::judge_answer_text;

/// Fill template placeholders. Unknown braces pass through untouched, so
/// literal `\boxed{}` in templates survives.
pub fn render_template(
    template: &str,
    problem: &str,
    outline: Option<&str>,
    episodes: Option<&str>,
) -> String {
    let mut out = template.replace("{problem}", problem);
    if let Some(outline) = outline {
        out = out.replace("{outline}", outline);
    }
    if let Some(episodes) = episodes {
        out = out.replace("{episodes}", episodes);
    }
    out
}

/// Executes strategies against the configured endpoints through one shared
/// rate-limited client. Distinct problems may run concurrently; stages
/// within one problem are sequential.
pub struct StrategyRunner {
    client: Arc<Client>,
    config: Arc<RunConfig>,
    instruct: Endpoint,
    thinking: Endpoint,
    instruct_sampling: RequestSampling,
    thinking_sampling: RequestSampling,
}

impl StrategyRunner {
    pub fn new(config: Arc<RunConfig>, client: Arc<Client>) -> Result<Self> {
        let instruct =
            Endpoint::from_config(&config.instruct_endpoint, ModelRole::Instruct, &config.http)?;
        let thinking =
            Endpoint::from_config(&config.thinking_endpoint, ModelRole::Thinking, &config.http)?;
        let instruct_sampling =
            resolve_sampling(&config.instruct_endpoint, ModelRole::Instruct, &config.sampling);
        let thinking_sampling =
            resolve_sampling(&config.thinking_endpoint, ModelRole::Thinking, &config.sampling);
        Ok(StrategyRunner {
            client,
            config,
            instruct,
            thinking,
            instruct_sampling,
            thinking_sampling,
        })
    }

    pub fn client(&self) -> &Arc<Client> {
        &self.client
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    fn endpoint(&self, role: ModelRole) -> &Endpoint {
        match role {
            ModelRole::Instruct => &self.instruct,
            ModelRole::Thinking => &self.thinking,
        }
    }

    fn sampling(&self, role: ModelRole) -> RequestSampling {
        match role {
            ModelRole::Instruct => self.instruct_sampling,
            ModelRole::Thinking => self.thinking_sampling,
        }
    }

    /// Model label under which outcomes of a strategy are stored: the model
    /// that owns the protocol (the thinking model, except for instruct
    /// solo runs and prefix completion).
    pub fn model_label(&self, strategy: Strategy, solo_role: ModelRole) -> &str {
        match strategy {
            Strategy::SoloThinking => &self.endpoint(solo_role).model_name,
            Strategy::PrefixCompletion => &self.instruct.model_name,
            _ => &self.thinking.model_name,
        }
    }

    /// Dispatch a storable strategy. Prefix completion needs a source trace
    /// and is driven by the study command instead.
    pub async fn run(
        &self,
        strategy: Strategy,
        solo_role: ModelRole,
        problem: &Problem,
    ) -> Result<StrategyOutcome> {
        match strategy {
            Strategy::SoloThinking => self.run_solo(problem, solo_role).await,
            Strategy::NoThinking => self.run_no_thinking(problem).await,
            Strategy::BestOfN => self.run_best_of_n(problem, self.config.best_of_n).await,
            Strategy::Cothink => self.run_cothink(problem).await,
            Strategy::PrefixCompletion => Err(Error::InvalidRequest(
                "prefix_completion needs a source trace; use the prefix study".into(),
            )),
        }
    }

    async fn call(
        &self,
        role: ModelRole,
        tag: String,
        user_text: String,
        prefill: Option<String>,
        sampling: RequestSampling,
    ) -> Result<(CompletionRequest, CompletionResult)> {
        let endpoint = self.endpoint(role);
        let request = CompletionRequest {
            model_name: endpoint.model_name.clone(),
            messages: vec![ChatMessage::user(user_text)],
            prefill_text: prefill,
            sampling,
            request_tag: tag,
        };
        let result = self.client.complete(endpoint, &request).await?;
        Ok((request, result))
    }

    fn record(
        &self,
        role: ModelRole,
        request: CompletionRequest,
        result: &CompletionResult,
    ) -> GenerationRecord {
        GenerationRecord {
            call_id: request.request_tag.clone(),
            model_name: request.model_name.clone(),
            role_of_model: role,
            request_messages: request.messages,
            prefill_text: request.prefill_text,
            output_text: result.output_text.clone(),
            completion_tokens: result.completion_tokens,
            prompt_tokens: result.prompt_tokens,
            token_source: result.token_source,
            timestamp: Utc::now(),
        }
    }

    /// Split, extract, and judge one output against the gold answer.
    /// Returns (final answer text, verdict, episode count).
    fn judge_output(&self, output_text: &str, gold: &str) -> (String, Verdict, Option<u32>) {
        let split = split_think(output_text, &self.config.think_tag_open, &self.config.think_tag_close);
        let (candidate, verdict) = judge_answer_text(&split.answer_text, gold);
        let episodes = if split.had_think_tags && !split.think_text.is_empty() {
            segment_episodes(&split.think_text, &self.config.episode_markers)
                .map(|eps| eps.len() as u32)
                .ok()
        } else {
            None
        };
        (candidate.unwrap_or_default(), verdict, episodes)
    }

    /// One model solves the problem in a single call.
    pub async fn run_solo(&self, problem: &Problem, role: ModelRole) -> Result<StrategyOutcome> {
        let strategy = Strategy::SoloThinking;
        let user = render_template(&self.config.prompt_templates.solo, &problem.statement, None, None);
        let tag = format!("{strategy}:{}", problem.id);
        let (request, result) = self
            .call(role, tag, user, None, self.sampling(role))
            .await
            .map_err(|e| e.in_strategy(strategy.as_str(), &problem.id))?;
        let (final_answer, verdict, episodes) =
            self.judge_output(&result.output_text, &problem.gold_answer);
        let call = self.record(role, request, &result);
        let total = call.completion_tokens;
        Ok(StrategyOutcome {
            problem_id: problem.id.clone(),
            strategy,
            calls: vec![call],
            total_generated_tokens: total,
            final_answer_text: final_answer,
            verdict,
            episode_count: episodes,
            selected_call: None,
            empty_outline: false,
            prefix: None,
            failed_candidates: vec![],
        })
    }

    /// Skip the think phase with an assistant prefill that closes the think
    /// block immediately. The prefill is fixed input and costs nothing.
    pub async fn run_no_thinking(&self, problem: &Problem) -> Result<StrategyOutcome> {
        let strategy = Strategy::NoThinking;
        let user = render_template(&self.config.prompt_templates.solo, &problem.statement, None, None);
        let prefill = self.config.prompt_templates.no_thinking_prefill.clone();
        let tag = format!("{strategy}:{}", problem.id);
        let (request, result) = self
            .call(ModelRole::Thinking, tag, user, Some(prefill), self.sampling(ModelRole::Thinking))
            .await
            .map_err(|e| e.in_strategy(strategy.as_str(), &problem.id))?;
        let (final_answer, verdict, episodes) =
            self.judge_output(&result.output_text, &problem.gold_answer);
        let call = self.record(ModelRole::Thinking, request, &result);
        let total = call.completion_tokens;
        Ok(StrategyOutcome {
            problem_id: problem.id.clone(),
            strategy,
            calls: vec![call],
            total_generated_tokens: total,
            final_answer_text: final_answer,
            verdict,
            episode_count: episodes,
            selected_call: None,
            empty_outline: false,
            prefix: None,
            failed_candidates: vec![],
        })
    }

    /// Sample `n` candidates and select the shortest by completion tokens
    /// (ties go to the lowest sample index). Every candidate's tokens count
    /// toward the cost. Failed candidates are recorded; the run proceeds
    /// with survivors.
    pub async fn run_best_of_n(&self, problem: &Problem, n: u32) -> Result<StrategyOutcome> {
        let strategy = Strategy::BestOfN;
        if n > 1 && self.config.sampling.temperature <= 0.0 {
            tracing::warn!(
                problem = %problem.id,
                "best_of_n with temperature 0 produces identical candidates"
            );
        }
        let endpoint = self.endpoint(ModelRole::Thinking);
        let user = render_template(&self.config.prompt_templates.solo, &problem.statement, None, None);
        let requests: Vec<CompletionRequest> = (0..n)
            .map(|i| CompletionRequest {
                model_name: endpoint.model_name.clone(),
                messages: vec![ChatMessage::user(user.clone())],
                prefill_text: None,
                sampling: self.sampling(ModelRole::Thinking),
                request_tag: format!("{strategy}:{}:s{i}", problem.id),
            })
            .collect();
        let results = self.client.run_batch(endpoint, &requests).await;

        let mut calls = Vec::new();
        let mut failed = Vec::new();
        let mut best: Option<(usize, u64)> = None; // (index into calls, tokens)
        for (i, (request, result)) in requests.into_iter().zip(results).enumerate() {
            match result {
                Ok(result) => {
                    let call = self.record(ModelRole::Thinking, request, &result);
                    if best.is_none_or(|(_, t)| call.completion_tokens < t) {
                        best = Some((calls.len(), call.completion_tokens));
                    }
                    calls.push(call);
                }
                Err(e) => failed.push(format!("candidate {i}: {e}")),
            }
        }
        let Some((selected, _)) = best else {
            return Err(Error::AllCandidatesFailed {
                problem_id: problem.id.clone(),
                n: n as usize,
            });
        };
        let total: u64 = calls.iter().map(|c| c.completion_tokens).sum();
        let (final_answer, verdict, episodes) =
            self.judge_output(&calls[selected].output_text, &problem.gold_answer);
        Ok(StrategyOutcome {
            problem_id: problem.id.clone(),
            strategy,
            calls,
            total_generated_tokens: total,
            final_answer_text: final_answer,
            verdict,
            episode_count: episodes,
            selected_call: Some(selected),
            empty_outline: false,
            prefix: None,
            failed_candidates: failed,
        })
    }

    /// Two stages: the instruct model drafts a concise outline, then the
    /// thinking model verifies and completes it. A stage-1 failure aborts
    /// the problem — there is no silent fallback to solo. The outline is
    /// never short-circuited, even when it already contains an answer.
    pub async fn run_cothink(&self, problem: &Problem) -> Result<StrategyOutcome> {
        let strategy = Strategy::Cothink;
        let outline_user = render_template(
            &self.config.prompt_templates.outline_stage1,
            &problem.statement,
            None,
            None,
        );
        let outline_sampling = RequestSampling {
            max_tokens: self.config.outline_max_tokens,
            ..self.sampling(ModelRole::Instruct)
        };
        let (outline_request, outline_result) = self
            .call(
                ModelRole::Instruct,
                format!("{strategy}:{}:outline", problem.id),
                outline_user,
                None,
                outline_sampling,
            )
            .await
            .map_err(|e| e.in_strategy(strategy.as_str(), &problem.id))?;
        let outline_text = outline_result.output_text.clone();
        let empty_outline = outline_text.trim().is_empty();
        let outline_call = self.record(ModelRole::Instruct, outline_request, &outline_result);

        let expand_user = render_template(
            &self.config.prompt_templates.expand_stage2,
            &problem.statement,
            Some(&outline_text),
            None,
        );
        let (expand_request, expand_result) = self
            .call(
                ModelRole::Thinking,
                format!("{strategy}:{}:expand", problem.id),
                expand_user,
                None,
                self.sampling(ModelRole::Thinking),
            )
            .await
            .map_err(|e| e.in_strategy(strategy.as_str(), &problem.id))?;
        let (final_answer, verdict, episodes) =
            self.judge_output(&expand_result.output_text, &problem.gold_answer);
        let expand_call = self.record(ModelRole::Thinking, expand_request, &expand_result);

        let total = outline_call.completion_tokens + expand_call.completion_tokens;
        Ok(StrategyOutcome {
            problem_id: problem.id.clone(),
            strategy,
            calls: vec![outline_call, expand_call],
            total_generated_tokens: total,
            final_answer_text: final_answer,
            verdict,
            episode_count: episodes,
            selected_call: None,
            empty_outline,
            prefix: None,
            failed_candidates: vec![],
        })
    }

    /// Complete a problem with the instruct model given the first `k`
    /// episodes of a thinking trace as context. Records how much of the
    /// source trace (episodes and estimated tokens) the prompt consumed.
    pub async fn run_prefix_completion(
        &self,
        problem: &Problem,
        source_episodes: &[Episode],
        k: usize,
    ) -> Result<StrategyOutcome> {
        let strategy = Strategy::PrefixCompletion;
        if k < 1 || k > source_episodes.len() {
            return Err(Error::PrefixOutOfRange { k, max: source_episodes.len() });
        }
        let prefix_text: String =
            source_episodes[..k].iter().map(|e| e.text.as_str()).collect();
        let full_text: String = source_episodes.iter().map(|e| e.text.as_str()).collect();
        let est = crate::inference::fallback_token_estimate;
        let fraction_tokens = if est(&full_text) == 0 {
            0.0
        } else {
            est(&prefix_text) as f64 / est(&full_text) as f64
        };
        let user = render_template(
            &self.config.prompt_templates.prefix_completion,
            &problem.statement,
            None,
            Some(&prefix_text),
        );
        let (request, result) = self
            .call(
                ModelRole::Instruct,
                format!("{strategy}:{}:k{k}", problem.id),
                user,
                None,
                self.sampling(ModelRole::Instruct),
            )
            .await
            .map_err(|e| e.in_strategy(strategy.as_str(), &problem.id))?;
        let (final_answer, verdict, episodes) =
            self.judge_output(&result.output_text, &problem.gold_answer);
        let call = self.record(ModelRole::Instruct, request, &result);
        let total = call.completion_tokens;
        Ok(StrategyOutcome {
            problem_id: problem.id.clone(),
            strategy,
            calls: vec![call],
            total_generated_tokens: total,
            final_answer_text: final_answer,
            verdict,
            episode_count: episodes,
            selected_call: None,
            empty_outline: false,
            prefix: Some(PrefixInfo {
                k,
                source_episodes: source_episodes.len(),
                fraction_episodes: k as f64 / source_episodes.len() as f64,
                fraction_tokens,
            }),
            failed_candidates: vec![],
        })
    }
}
