//! Report building and rendering: efficiency rows per (model, strategy,
//! dataset), win rates, aggregate deltas, plot data, and the prefix study.
//!
//! Rendering is deterministic: rows are sorted, floats are emitted at fixed
//! display precision, and maps are ordered. Rendering the same document
//! twice yields identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{
    DatasetTag, EfficiencyRow, ModelRole, ScalingParams, Strategy, TokenSource,
};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate_delta, pass_at_1, reasoning_efficiency, render_metric, scaling_reference,
    token_efficiency, win_rate, DeltaField, MetricDirection, MetricKind, WinRateResult,
};
use crate::store::{RunStore, StoredOutcome};

/// Published reference aggregates shown side by side with computed values.
/// The accuracy figure is not recoverable from display-rounded table values;
/// reports must show both numbers and flag the divergence.
pub const REFERENCE_TOKENS_DELTA_PCT: f64 = -21.1;
pub const REFERENCE_ACCURACY_DELTA_PCT: f64 = 1.66;

/// Win-rate convention used by reports, stated verbatim in the output.
pub const WIN_RATE_CONVENTION: &str = "cothink scored against {solo_thinking, best_of_n, \
no_thinking, cothink} within each thinking-model block; strict win 1.0, tie-for-best 0.5; \
ties detected at display precision";

pub const WIN_RATE_COMPARISON: [Strategy; 4] = [
    Strategy::SoloThinking,
    Strategy::BestOfN,
    Strategy::NoThinking,
    Strategy::Cothink,
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenSourceTally {
    pub server_usage: u64,
    pub fallback_estimate: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hashes: Vec<String>,
    /// template name -> short content hash ("|"-joined when runs disagree)
    pub template_versions: BTreeMap<String, String>,
    pub token_sources: TokenSourceTally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateSummary {
    pub dataset: DatasetTag,
    pub target: Strategy,
    pub comparison: Vec<Strategy>,
    pub convention: String,
    #[serde(flatten)]
    pub result: WinRateResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateDeltas {
    pub pairs: usize,
    pub tokens_delta_pct: f64,
    pub accuracy_delta_pct: f64,
    pub reference_tokens_delta_pct: f64,
    pub reference_accuracy_delta_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub baseline_label: String,
    pub rows: Vec<EfficiencyRow>,
    pub win_rate_summary: Vec<WinRateSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate_deltas: Option<AggregateDeltas>,
    pub provenance: Provenance,
}

/// Table-style display order for strategies.
fn strategy_rank(strategy: Strategy) -> u8 {
    match strategy {
        Strategy::SoloThinking => 0,
        Strategy::BestOfN => 1,
        Strategy::NoThinking => 2,
        Strategy::Cothink => 3,
        Strategy::PrefixCompletion => 4,
    }
}

fn sort_rows(rows: &mut [EfficiencyRow], baseline_label: &str) {
    rows.sort_by(|a, b| {
        let a_base = a.model_label != baseline_label;
        let b_base = b.model_label != baseline_label;
        (a.dataset.clone(), a_base, &a.model_label, strategy_rank(a.strategy)).cmp(&(
            b.dataset.clone(),
            b_base,
            &b.model_label,
            strategy_rank(b.strategy),
        ))
    });
}

struct LoadedRun {
    records: Vec<StoredOutcome>,
    dataset: DatasetTag,
    meta: Option<crate::store::RunMeta>,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let records = RunStore::load_all(dir)?;
    if records.is_empty() {
        return Err(Error::Report(format!("run dir {} holds no outcomes", dir.display())));
    }
    let meta = RunStore::read_meta(dir)?;
    let dataset = match &meta {
        Some(meta) => DatasetTag::parse(&meta.dataset)
            .map_err(|e| Error::Report(format!("run meta in {}: {e}", dir.display())))?,
        None => {
            return Err(Error::Report(format!(
                "run dir {} lacks {}; cannot determine its dataset",
                dir.display(),
                crate::store::META_FILE
            )))
        }
    };
    Ok(LoadedRun { records, dataset, meta })
}

/// Score stored runs into a report. `baseline_dirs` provide the per-dataset
/// reference rows that anchor reasoning efficiency.
pub fn score_runs(run_dirs: &[PathBuf], baseline_dirs: &[PathBuf]) -> Result<ReportDocument> {
    if baseline_dirs.is_empty() {
        return Err(Error::Report("scoring needs at least one baseline run dir".into()));
    }
    let mut all_dirs: Vec<(PathBuf, bool)> =
        baseline_dirs.iter().map(|d| (d.clone(), true)).collect();
    for dir in run_dirs {
        if !baseline_dirs.contains(dir) {
            all_dirs.push((dir.clone(), false));
        }
    }

    // (dataset, model_label, strategy) -> outcomes
    let mut groups: BTreeMap<(DatasetTag, String, Strategy), Vec<StoredOutcome>> = BTreeMap::new();
    let mut baseline_keys: BTreeSet<(DatasetTag, String, Strategy)> = BTreeSet::new();
    let mut provenance = Provenance::default();
    let mut config_hashes: BTreeSet<String> = BTreeSet::new();
    let mut template_versions: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();

    for (dir, is_baseline) in &all_dirs {
        let run = load_run(dir)?;
        if let Some(meta) = &run.meta {
            config_hashes.insert(meta.config_sha256.clone());
            for (name, version) in &meta.template_versions {
                template_versions.entry(name.clone()).or_default().insert(version.clone());
            }
        }
        for record in run.records {
            for call in &record.outcome.calls {
                match call.token_source {
                    TokenSource::ServerUsage => provenance.token_sources.server_usage += 1,
                    TokenSource::FallbackEstimate => {
                        provenance.token_sources.fallback_estimate += 1
                    }
                }
            }
            let key =
                (run.dataset.clone(), record.model_label.clone(), record.outcome.strategy);
            if *is_baseline {
                baseline_keys.insert(key.clone());
            }
            groups.entry(key).or_default().push(record);
        }
    }
    provenance.config_hashes = config_hashes.into_iter().collect();
    provenance.template_versions = template_versions
        .into_iter()
        .map(|(name, versions)| (name, versions.into_iter().collect::<Vec<_>>().join("|")))
        .collect();

    // Problem coverage must agree across every group of a dataset.
    let mut coverage: BTreeMap<DatasetTag, BTreeSet<String>> = BTreeMap::new();
    for ((dataset, label, strategy), records) in &groups {
        let ids: BTreeSet<String> =
            records.iter().map(|r| r.outcome.problem_id.clone()).collect();
        match coverage.get(dataset) {
            None => {
                coverage.insert(dataset.clone(), ids);
            }
            Some(expected) if *expected != ids => {
                return Err(Error::CoverageMismatch(format!(
                    "({dataset}, {label}, {strategy}) covers {} problems while another run covers {}",
                    ids.len(),
                    expected.len()
                )));
            }
            Some(_) => {}
        }
    }

    // Baseline: exactly one (label, strategy) per dataset among baseline dirs.
    let mut baseline_by_dataset: BTreeMap<DatasetTag, (String, Strategy)> = BTreeMap::new();
    let mut baseline_labels: BTreeSet<String> = BTreeSet::new();
    for (dataset, label, strategy) in &baseline_keys {
        if let Some((existing, _)) = baseline_by_dataset.get(dataset) {
            return Err(Error::Report(format!(
                "dataset {dataset} has multiple baseline rows ({existing} and {label})"
            )));
        }
        baseline_by_dataset.insert(dataset.clone(), (label.clone(), *strategy));
        baseline_labels.insert(label.clone());
    }
    if baseline_labels.len() != 1 {
        return Err(Error::Report(format!(
            "baseline dirs must share one model label, found {baseline_labels:?}"
        )));
    }
    let baseline_label = baseline_labels.into_iter().next().unwrap();

    // Baseline tau per dataset.
    let mut baseline_tau: BTreeMap<DatasetTag, f64> = BTreeMap::new();
    for (dataset, (label, strategy)) in &baseline_by_dataset {
        let records = &groups[&(dataset.clone(), label.clone(), *strategy)];
        let (pass, mean) = group_pass_and_mean(records)?;
        baseline_tau.insert(dataset.clone(), token_efficiency(pass, mean)?);
    }

    let mut rows = Vec::new();
    for ((dataset, label, strategy), records) in &groups {
        let (pass, mean) = group_pass_and_mean(records)?;
        let tau = token_efficiency(pass, mean)?;
        let eta = match baseline_tau.get(dataset) {
            Some(&base) => Some(reasoning_efficiency(tau, base)?),
            None => {
                return Err(Error::CoverageMismatch(format!(
                    "dataset {dataset} has rows but no baseline run"
                )))
            }
        };
        rows.push(EfficiencyRow {
            model_label: label.clone(),
            strategy: *strategy,
            dataset: dataset.clone(),
            pass_at_1_pct: pass,
            mean_tokens: mean,
            token_efficiency: tau,
            reasoning_efficiency_pct: eta,
        });
    }
    sort_rows(&mut rows, &baseline_label);

    let win_rate_summary = win_rates_per_dataset(&rows)?;
    let aggregate_deltas = build_aggregate_deltas(&rows)?;

    Ok(ReportDocument {
        schema_version: crate::store::SCHEMA_VERSION,
        baseline_label,
        rows,
        win_rate_summary,
        aggregate_deltas,
        provenance,
    })
}

fn group_pass_and_mean(records: &[StoredOutcome]) -> Result<(f64, f64)> {
    let verdicts: Vec<_> = records.iter().map(|r| r.outcome.verdict).collect();
    let pass = pass_at_1(&verdicts)?;
    let total: u64 = records.iter().map(|r| r.outcome.total_generated_tokens).sum();
    let mean = total as f64 / records.len() as f64;
    Ok((pass, mean))
}

/// Per-dataset win rates for CoThink over the blocks carrying all four
/// compared strategies. Datasets with no complete block are skipped.
pub fn win_rates_per_dataset(rows: &[EfficiencyRow]) -> Result<Vec<WinRateSummary>> {
    let mut datasets: Vec<DatasetTag> = Vec::new();
    for row in rows {
        if !datasets.contains(&row.dataset) {
            datasets.push(row.dataset.clone());
        }
    }
    let mut summaries = Vec::new();
    for dataset in datasets {
        let in_dataset: Vec<&EfficiencyRow> =
            rows.iter().filter(|r| r.dataset == dataset).collect();
        let mut complete_blocks: BTreeSet<&str> = BTreeSet::new();
        let mut by_label: BTreeMap<&str, BTreeSet<Strategy>> = BTreeMap::new();
        for row in &in_dataset {
            by_label.entry(row.model_label.as_str()).or_default().insert(row.strategy);
        }
        for (label, strategies) in &by_label {
            if WIN_RATE_COMPARISON.iter().all(|s| strategies.contains(s)) {
                complete_blocks.insert(label);
            }
        }
        if complete_blocks.is_empty() {
            continue;
        }
        let scored_rows: Vec<EfficiencyRow> = in_dataset
            .iter()
            .filter(|r| {
                complete_blocks.contains(r.model_label.as_str())
                    && WIN_RATE_COMPARISON.contains(&r.strategy)
            })
            .map(|r| (*r).clone())
            .collect();
        let result = win_rate(
            &scored_rows,
            Strategy::Cothink,
            &WIN_RATE_COMPARISON,
            &MetricDirection::canonical(),
        )?;
        summaries.push(WinRateSummary {
            dataset,
            target: Strategy::Cothink,
            comparison: WIN_RATE_COMPARISON.to_vec(),
            convention: WIN_RATE_CONVENTION.to_string(),
            result,
        });
    }
    Ok(summaries)
}

fn build_aggregate_deltas(rows: &[EfficiencyRow]) -> Result<Option<AggregateDeltas>> {
    let cothink: Vec<EfficiencyRow> =
        rows.iter().filter(|r| r.strategy == Strategy::Cothink).cloned().collect();
    let solo_keys: BTreeSet<(String, DatasetTag)> = rows
        .iter()
        .filter(|r| r.strategy == Strategy::SoloThinking)
        .map(|r| (r.model_label.clone(), r.dataset.clone()))
        .collect();
    let paired: Vec<EfficiencyRow> = cothink
        .into_iter()
        .filter(|r| solo_keys.contains(&(r.model_label.clone(), r.dataset.clone())))
        .collect();
    if paired.is_empty() {
        return Ok(None);
    }
    let solo: Vec<EfficiencyRow> =
        rows.iter().filter(|r| r.strategy == Strategy::SoloThinking).cloned().collect();
    Ok(Some(AggregateDeltas {
        pairs: paired.len(),
        tokens_delta_pct: aggregate_delta(&paired, &solo, DeltaField::Tokens)?,
        accuracy_delta_pct: aggregate_delta(&paired, &solo, DeltaField::Pass)?,
        reference_tokens_delta_pct: REFERENCE_TOKENS_DELTA_PCT,
        reference_accuracy_delta_pct: REFERENCE_ACCURACY_DELTA_PCT,
    }))
}

/// Output format for `render_report`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

/// Render a report document to bytes. Same document, same bytes.
pub fn render_report(report: &ReportDocument, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_string_pretty(report)
                .map_err(|e| Error::serde("rendering report JSON", e))?;
            out.push('\n');
            Ok(out)
        }
        ReportFormat::Csv => Ok(render_csv(report)),
        ReportFormat::Markdown => Ok(render_markdown(report)),
    }
}

fn csv_field(raw: &str) -> String {
    if raw.contains(',') || raw.contains('"') || raw.contains('\n') || raw.contains('\r') {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

fn csv_line(fields: &[String]) -> String {
    let mut line = fields.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(",");
    line.push_str("\r\n");
    line
}

fn render_csv(report: &ReportDocument) -> String {
    let mut out = csv_line(&[
        "model_label".into(),
        "strategy".into(),
        "dataset".into(),
        "pass_at_1_pct".into(),
        "mean_tokens".into(),
        "token_efficiency".into(),
        "reasoning_efficiency_pct".into(),
    ]);
    for row in &report.rows {
        out.push_str(&csv_line(&[
            row.model_label.clone(),
            row.strategy.to_string(),
            row.dataset.to_string(),
            render_metric(MetricKind::PassAt1, row.pass_at_1_pct),
            render_metric(MetricKind::Tokens, row.mean_tokens),
            render_metric(MetricKind::Tau, row.token_efficiency),
            row.reasoning_efficiency_pct
                .map(|e| render_metric(MetricKind::Eta, e))
                .unwrap_or_default(),
        ]));
    }
    out
}

fn render_markdown(report: &ReportDocument) -> String {
    let mut out = String::new();
    out.push_str("# Efficiency report\n\n");
    out.push_str(&format!("Baseline: `{}`\n", report.baseline_label));
    let fallback = report.provenance.token_sources.fallback_estimate;
    if fallback > 0 {
        let total = fallback + report.provenance.token_sources.server_usage;
        out.push_str(&format!(
            "\n**WARNING: {fallback} of {total} token counts are fallback estimates \
             (ceil(bytes/4)), not server-reported usage.**\n"
        ));
    }

    let mut datasets: Vec<DatasetTag> = Vec::new();
    for row in &report.rows {
        if !datasets.contains(&row.dataset) {
            datasets.push(row.dataset.clone());
        }
    }
    for dataset in &datasets {
        out.push_str(&format!("\n## {dataset}\n\n"));
        out.push_str("| Model | Strategy | Pass@1 (%) | #Tokens | tau | eta (%) |\n");
        out.push_str("|---|---|---:|---:|---:|---:|\n");
        for row in report.rows.iter().filter(|r| r.dataset == *dataset) {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                row.model_label,
                row.strategy,
                render_metric(MetricKind::PassAt1, row.pass_at_1_pct),
                render_metric(MetricKind::Tokens, row.mean_tokens),
                render_metric(MetricKind::Tau, row.token_efficiency),
                row.reasoning_efficiency_pct
                    .map(|e| render_metric(MetricKind::Eta, e))
                    .unwrap_or_else(|| "-".into()),
            ));
        }
    }

    if !report.win_rate_summary.is_empty() {
        out.push_str("\n## Win rate (cothink)\n\n");
        for summary in &report.win_rate_summary {
            out.push_str(&format!(
                "- {}: {}/{} points ({}%)\n",
                summary.dataset,
                format_points(summary.result.points_won),
                summary.result.points_total,
                render_metric(MetricKind::Eta, summary.result.rate_pct),
            ));
        }
        out.push_str(&format!("\nConvention: {}\n", WIN_RATE_CONVENTION));
    }

    if let Some(deltas) = &report.aggregate_deltas {
        out.push_str("\n## Aggregate deltas: cothink vs solo_thinking\n\n");
        out.push_str(&format!(
            "- tokens: computed {:+.1}% vs reference {:+.1}% ({})\n",
            deltas.tokens_delta_pct,
            deltas.reference_tokens_delta_pct,
            divergence_flag(deltas.tokens_delta_pct, deltas.reference_tokens_delta_pct, 1.5),
        ));
        out.push_str(&format!(
            "- accuracy: computed {:+.2}% vs reference {:+.2}% ({})\n",
            deltas.accuracy_delta_pct,
            deltas.reference_accuracy_delta_pct,
            divergence_flag(deltas.accuracy_delta_pct, deltas.reference_accuracy_delta_pct, 1.5),
        ));
        out.push_str(
            "- note: the reference accuracy aggregate is not recoverable from \
             display-rounded table values; both numbers are shown side by side.\n",
        );
        out.push_str(&format!("- pairs: {}\n", deltas.pairs));
    }

    out.push_str("\n## Provenance\n\n");
    out.push_str(&format!("- config hashes: {}\n", report.provenance.config_hashes.join(", ")));
    let templates = report
        .provenance
        .template_versions
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(", ");
    out.push_str(&format!("- template versions: {templates}\n"));
    out.push_str(&format!(
        "- token counts: {} server-reported, {} fallback estimates\n",
        report.provenance.token_sources.server_usage,
        report.provenance.token_sources.fallback_estimate
    ));
    out
}

fn format_points(points: f64) -> String {
    if points.fract() == 0.0 {
        format!("{points:.0}")
    } else {
        format!("{points:.1}")
    }
}

fn divergence_flag(computed: f64, reference: f64, tolerance: f64) -> &'static str {
    if (computed - reference).abs() <= tolerance {
        "consistent"
    } else {
        "DIVERGES"
    }
}

/// Plot data: one point per row (cost ratio vs eta), plus reference curves
/// sampled log-uniformly over the observed ratio range.
pub fn plot_data(
    report: &ReportDocument,
    scaling: &[ScalingParams],
    curve_samples: usize,
) -> Result<String> {
    if report.rows.is_empty() {
        return Err(Error::Report("plot data over an empty report".into()));
    }
    // Baseline mean tokens per dataset: the baseline label's row.
    let mut baseline_mean: BTreeMap<DatasetTag, f64> = BTreeMap::new();
    for row in &report.rows {
        if row.model_label == report.baseline_label {
            baseline_mean.insert(row.dataset.clone(), row.mean_tokens);
        }
    }

    let mut out = csv_line(&[
        "kind".into(),
        "series".into(),
        "dataset".into(),
        "cost_ratio".into(),
        "eta_pct".into(),
    ]);
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = f64::NEG_INFINITY;
    for row in &report.rows {
        let base = baseline_mean.get(&row.dataset).ok_or_else(|| {
            Error::Report(format!("dataset {} lacks a baseline row", row.dataset))
        })?;
        let eta = row.reasoning_efficiency_pct.ok_or_else(|| {
            Error::Report(format!(
                "row ({}, {}, {}) lacks reasoning efficiency",
                row.model_label, row.strategy, row.dataset
            ))
        })?;
        let ratio = row.mean_tokens / base;
        min_ratio = min_ratio.min(ratio);
        max_ratio = max_ratio.max(ratio);
        out.push_str(&csv_line(&[
            "point".into(),
            format!("{}/{}", row.model_label, row.strategy),
            row.dataset.to_string(),
            format!("{ratio:.6}"),
            format!("{eta:.4}"),
        ]));
    }

    for params in scaling {
        let series = format!(
            "reference beta={} convention={}",
            params.exponent_beta, params.exponent_convention
        );
        let samples = if min_ratio == max_ratio { 1 } else { curve_samples.max(2) };
        for i in 0..samples {
            let ratio = if samples == 1 {
                min_ratio
            } else {
                let t = i as f64 / (samples - 1) as f64;
                (min_ratio.ln() + t * (max_ratio.ln() - min_ratio.ln())).exp()
            };
            let eta = scaling_reference(ratio, *params)?;
            out.push_str(&csv_line(&[
                "reference".into(),
                series.clone(),
                String::new(),
                format!("{ratio:.6}"),
                format!("{eta:.4}"),
            ]));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Prefix study
// ---------------------------------------------------------------------------

/// One problem's sweep result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixStudyRow {
    pub problem_id: String,
    pub source_episodes: usize,
    /// Highest k tried.
    pub swept_to: usize,
    pub solved: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction_episodes: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction_tokens: Option<f64>,
}

/// The study table: per-problem bars plus unweighted means over solved
/// problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixStudyTable {
    pub rows: Vec<PrefixStudyRow>,
    pub solved: usize,
    pub total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_fraction_episodes: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_fraction_tokens: Option<f64>,
}

/// For each problem: load its stored thinking trace, then sweep k = 1..max
/// until the instruct model answers correctly; report minimal k and the
/// episode/token fractions consumed.
pub async fn prefix_study(
    runner: &crate::strategies::StrategyRunner,
    source_dir: &Path,
    problems: &crate::dataset::ProblemSet,
    problem_ids: &[String],
    max_k: usize,
) -> Result<PrefixStudyTable> {
    if max_k < 1 {
        return Err(Error::Report("prefix study needs max_k >= 1".into()));
    }
    let stored = RunStore::load_all(source_dir)?;
    let by_problem: BTreeMap<&str, &StoredOutcome> = stored
        .iter()
        .filter(|r| r.outcome.strategy == Strategy::SoloThinking)
        .map(|r| (r.outcome.problem_id.as_str(), r))
        .collect();
    let problem_by_id: BTreeMap<&str, &crate::domain::Problem> =
        problems.problems.iter().map(|p| (p.id.as_str(), p)).collect();

    let config = runner.config();
    let mut prepared = Vec::new();
    for id in problem_ids {
        let problem = problem_by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Report(format!("problem `{id}` not in the dataset")))?;
        let record = by_problem
            .get(id.as_str())
            .ok_or_else(|| Error::MissingTrace { problem_id: id.clone() })?;
        let call = record
            .outcome
            .answer_call()
            .ok_or_else(|| Error::MissingTrace { problem_id: id.clone() })?;
        let split = crate::trace::split_think(
            &call.output_text,
            &config.think_tag_open,
            &config.think_tag_close,
        );
        if !split.had_think_tags || split.think_text.is_empty() {
            return Err(Error::MissingTrace { problem_id: id.clone() });
        }
        let episodes = crate::trace::segment_episodes(&split.think_text, &config.episode_markers)?;
        prepared.push((*problem, episodes));
    }

    let sweeps = prepared.iter().map(|(problem, episodes)| async move {
        let limit = max_k.min(episodes.len());
        let mut solved_at = None;
        let mut last_info: Option<crate::domain::PrefixInfo> = None;
        for k in 1..=limit {
            let outcome = runner.run_prefix_completion(problem, episodes, k).await?;
            let info = outcome.prefix.clone();
            if outcome.verdict == crate::domain::Verdict::Correct {
                solved_at = info;
                break;
            }
            last_info = info;
        }
        let _ = last_info;
        Ok::<PrefixStudyRow, Error>(match solved_at {
            Some(info) => PrefixStudyRow {
                problem_id: problem.id.clone(),
                source_episodes: episodes.len(),
                swept_to: info.k,
                solved: true,
                min_k: Some(info.k),
                fraction_episodes: Some(info.fraction_episodes),
                fraction_tokens: Some(info.fraction_tokens),
            },
            None => PrefixStudyRow {
                problem_id: problem.id.clone(),
                source_episodes: episodes.len(),
                swept_to: limit,
                solved: false,
                min_k: None,
                fraction_episodes: None,
                fraction_tokens: None,
            },
        })
    });
    let mut rows: Vec<PrefixStudyRow> =
        futures::future::join_all(sweeps).await.into_iter().collect::<Result<_>>()?;
    rows.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));

    let solved_rows: Vec<&PrefixStudyRow> = rows.iter().filter(|r| r.solved).collect();
    let mean = |f: fn(&PrefixStudyRow) -> Option<f64>| {
        if solved_rows.is_empty() {
            None
        } else {
            Some(solved_rows.iter().filter_map(|r| f(r)).sum::<f64>() / solved_rows.len() as f64)
        }
    };
    Ok(PrefixStudyTable {
        solved: solved_rows.len(),
        total: rows.len(),
        mean_fraction_episodes: mean(|r| r.fraction_episodes),
        mean_fraction_tokens: mean(|r| r.fraction_tokens),
        rows,
    })
}

/// CSV rendering of the study table (per-problem bar data).
pub fn render_prefix_study_csv(table: &PrefixStudyTable) -> String {
    let mut out = csv_line(&[
        "problem_id".into(),
        "source_episodes".into(),
        "swept_to".into(),
        "solved".into(),
        "min_k".into(),
        "fraction_episodes".into(),
        "fraction_tokens".into(),
    ]);
    for row in &table.rows {
        out.push_str(&csv_line(&[
            row.problem_id.clone(),
            row.source_episodes.to_string(),
            row.swept_to.to_string(),
            row.solved.to_string(),
            row.min_k.map(|k| k.to_string()).unwrap_or_default(),
            row.fraction_episodes.map(|f| format!("{f:.4}")).unwrap_or_default(),
            row.fraction_tokens.map(|f| format!("{f:.4}")).unwrap_or_default(),
        ]));
    }
    out
}

/// Build a run meta for provenance.
pub fn build_run_meta(
    config: &crate::config::RunConfig,
    config_sha256: String,
    strategy: Strategy,
    dataset: &DatasetTag,
    model_label: &str,
) -> crate::store::RunMeta {
    let template_versions = config
        .prompt_templates
        .named()
        .iter()
        .map(|(name, text)| (name.to_string(), crate::runner::template_version(text)))
        .collect();
    crate::store::RunMeta {
        schema_version: crate::store::SCHEMA_VERSION,
        strategy,
        dataset: dataset.to_string(),
        model_label: model_label.to_string(),
        config_sha256,
        template_versions,
        created_at: chrono::Utc::now(),
    }
}

/// Convenience for tests and the study: the solo role implied by a label.
pub fn role_for_label(config: &crate::config::RunConfig, label: &str) -> ModelRole {
    if label == config.instruct_endpoint.model_name {
        ModelRole::Instruct
    } else {
        ModelRole::Thinking
    }
}
