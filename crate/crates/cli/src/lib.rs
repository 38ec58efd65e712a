//! Command layer: run experiments, score stored runs, render reports, emit
//! plot data, and drive the prefix-completion study.
//!
//! Exit codes: 0 success, 1 partial or environmental failures, 2
//! configuration errors.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use cothink_core::config::{load_config, RunConfig};
use cothink_core::dataset::{load_dataset, ProblemSet};
use cothink_core::domain::{DatasetTag, ExponentConvention, ModelRole, ScalingParams, Strategy};
use cothink_core::report::{
    build_run_meta, plot_data, prefix_study, render_prefix_study_csv, render_report, score_runs,
    ReportDocument, ReportFormat,
};
use cothink_core::runner::{build_client, execute_run, file_sha256};
use cothink_core::store::RunStore;
use cothink_core::strategies::StrategyRunner;
use cothink_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cothink", version, about = "Reasoning-efficiency benchmark harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one strategy over a dataset, resume-aware.
    Run(RunArgs),
    /// Score stored runs into a report document.
    Score(ScoreArgs),
    /// Render a report document as markdown, CSV, or JSON.
    Report(ReportArgs),
    /// Emit (cost ratio, efficiency) points plus reference curves as CSV.
    PlotData(PlotDataArgs),
    /// Sweep episode prefixes of stored thinking traces through the
    /// instruct model until it answers correctly.
    PrefixStudy(PrefixStudyArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset tag: gsm8k, math500, aime24, or custom:<name>.
    #[arg(long)]
    pub dataset: String,
    /// solo-thinking, no-thinking, best-of-n, or cothink.
    #[arg(long)]
    pub strategy: String,
    /// Run directory; defaults to <cache_dir>/<strategy>-<dataset>.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Problem JSONL path, overriding the config's [datasets] entry.
    #[arg(long)]
    pub dataset_file: Option<PathBuf>,
    /// Endpoint for solo runs: thinking (default) or instruct.
    #[arg(long, default_value = "thinking")]
    pub role: String,
    #[arg(long, default_value_t = 0)]
    pub sample_index: u32,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Run directories to score.
    #[arg(long, required = true, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Baseline run directory (repeat for multiple datasets).
    #[arg(long, required = true, num_args = 1..)]
    pub baseline: Vec<PathBuf>,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// markdown, csv, or json.
    #[arg(long)]
    pub format: String,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotDataArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Scaling exponent for a reference curve (repeatable).
    #[arg(long = "beta", default_values_t = [0.3, 0.5])]
    pub betas: Vec<f64>,
    /// Exponent convention: beta or beta-minus-one. Required: both readings
    /// of the hypothesized law are supported and neither is a default.
    #[arg(long)]
    pub convention: String,
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PrefixStudyArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory holding solo-thinking traces of the thinking model.
    #[arg(long)]
    pub source: PathBuf,
    /// Problem ids (comma-separated or repeated).
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub problems: Vec<String>,
    #[arg(long)]
    pub max_k: usize,
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub dataset_file: Option<PathBuf>,
    /// Write the study CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Dispatch a parsed invocation and return the process exit code.
pub fn run(cli: Cli) -> i32 {
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: building async runtime: {e}");
            return EXIT_PARTIAL;
        }
    };
    let result = runtime.block_on(async {
        match cli.command {
            Command::Run(args) => cmd_run(args).await,
            Command::Score(args) => cmd_score(args),
            Command::Report(args) => cmd_report(args),
            Command::PlotData(args) => cmd_plot_data(args),
            Command::PrefixStudy(args) => cmd_prefix_study(args).await,
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(error: &Error) -> i32 {
    match error {
        Error::Config(_)
        | Error::MalformedDatasetLine { .. }
        | Error::DuplicateProblemId { .. }
        | Error::DatasetCountMismatch { .. }
        | Error::MissingAuthEnv { .. }
        | Error::InvalidRequest(_)
        | Error::InvalidMarkerPattern { .. }
        | Error::Report(_)
        | Error::CoverageMismatch(_)
        | Error::MetricInput(_)
        | Error::MissingCell { .. }
        | Error::UnpairedRow { .. }
        | Error::MissingTrace { .. } => EXIT_CONFIG,
        _ => EXIT_PARTIAL,
    }
}

fn parse_tag(raw: &str) -> Result<DatasetTag, Error> {
    DatasetTag::parse(raw).map_err(Error::InvalidRequest)
}

fn parse_strategy(raw: &str) -> Result<Strategy, Error> {
    Strategy::parse(raw).map_err(Error::InvalidRequest)
}

fn resolve_dataset_file(
    config: &RunConfig,
    tag: &DatasetTag,
    override_path: &Option<PathBuf>,
) -> Result<PathBuf, Error> {
    if let Some(path) = override_path {
        return Ok(path.clone());
    }
    config.datasets.get(&tag.to_string()).cloned().ok_or_else(|| {
        Error::InvalidRequest(format!(
            "no dataset file for `{tag}`: add it under [datasets] in the config or pass --dataset-file"
        ))
    })
}

fn load_problems(
    config: &RunConfig,
    tag: &DatasetTag,
    override_path: &Option<PathBuf>,
) -> Result<ProblemSet, Error> {
    let path = resolve_dataset_file(config, tag, override_path)?;
    load_dataset(&path, tag.clone())
}

fn default_out_dir(config: &RunConfig, strategy: Strategy, tag: &DatasetTag) -> PathBuf {
    let slug = format!("{strategy}-{tag}").replace(':', "-");
    config.cache_dir.join(slug)
}

async fn cmd_run(args: RunArgs) -> Result<i32, Error> {
    let config = Arc::new(load_config(&args.config)?);
    let tag = parse_tag(&args.dataset)?;
    let strategy = parse_strategy(&args.strategy)?;
    if strategy == Strategy::PrefixCompletion {
        return Err(Error::InvalidRequest(
            "prefix_completion needs a source trace; use the prefix-study subcommand".into(),
        ));
    }
    let solo_role = match args.role.as_str() {
        "thinking" => ModelRole::Thinking,
        "instruct" => ModelRole::Instruct,
        other => {
            return Err(Error::InvalidRequest(format!(
                "unknown role `{other}` (expected instruct or thinking)"
            )))
        }
    };
    let problems = load_problems(&config, &tag, &args.dataset_file)?;

    let client = build_client(&config)?;
    let runner = StrategyRunner::new(config.clone(), client.clone())?;
    let model_label = runner.model_label(strategy, solo_role).to_string();

    let out_dir = args.out.unwrap_or_else(|| default_out_dir(&config, strategy, &tag));
    let store = RunStore::open(&out_dir)?;
    let config_hash = file_sha256(&args.config)?;
    match RunStore::read_meta(&out_dir)? {
        Some(existing) => {
            if existing.strategy != strategy
                || existing.dataset != tag.to_string()
                || existing.model_label != model_label
            {
                return Err(Error::InvalidRequest(format!(
                    "run dir {} belongs to ({}, {}, {}); refusing to mix in ({}, {}, {})",
                    out_dir.display(),
                    existing.strategy,
                    existing.dataset,
                    existing.model_label,
                    strategy,
                    tag,
                    model_label,
                )));
            }
            if existing.config_sha256 != config_hash {
                tracing::warn!(
                    "config hash changed since this run dir was created ({} -> {})",
                    existing.config_sha256,
                    config_hash
                );
            }
        }
        None => {
            let meta = build_run_meta(&config, config_hash, strategy, &tag, &model_label);
            store.write_meta(&meta)?;
        }
    }

    let summary =
        execute_run(&runner, &store, &problems, strategy, solo_role, args.sample_index).await?;
    println!(
        "run complete: strategy={} model={} dataset={} calls_issued={} cached={} completed={} failures={}",
        summary.strategy,
        summary.model_label,
        tag,
        summary.issued_calls,
        summary.skipped,
        summary.completed,
        summary.failures.len()
    );
    for (problem_id, message) in &summary.failures {
        eprintln!("failed: {problem_id}: {message}");
    }
    Ok(if summary.failures.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

fn cmd_score(args: ScoreArgs) -> Result<i32, Error> {
    let report = score_runs(&args.runs, &args.baseline)?;
    let json = render_report(&report, ReportFormat::Json)?;
    std::fs::write(&args.out, &json)
        .map_err(|e| Error::io(format!("writing {}", args.out.display()), e))?;
    println!(
        "report written to {}: {} rows, baseline `{}`",
        args.out.display(),
        report.rows.len(),
        report.baseline_label
    );
    if report.provenance.token_sources.fallback_estimate > 0 {
        println!(
            "WARNING: {} token counts are fallback estimates",
            report.provenance.token_sources.fallback_estimate
        );
    }
    Ok(EXIT_OK)
}

fn read_report(path: &Path) -> Result<ReportDocument, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::serde("parsing report document", e))
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e)),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_report(args: ReportArgs) -> Result<i32, Error> {
    let format: ReportFormat = args.format.parse().map_err(Error::InvalidRequest)?;
    let report = read_report(&args.input)?;
    let rendered = render_report(&report, format)?;
    emit(&args.out, &rendered)?;
    Ok(EXIT_OK)
}

fn cmd_plot_data(args: PlotDataArgs) -> Result<i32, Error> {
    let convention: ExponentConvention =
        args.convention.parse().map_err(Error::InvalidRequest)?;
    let params: Vec<ScalingParams> = args
        .betas
        .iter()
        .map(|&beta| ScalingParams::new(beta, convention).map_err(Error::InvalidRequest))
        .collect::<Result<_, _>>()?;
    let report = read_report(&args.input)?;
    let csv = plot_data(&report, &params, args.samples)?;
    emit(&args.out, &csv)?;
    Ok(EXIT_OK)
}

async fn cmd_prefix_study(args: PrefixStudyArgs) -> Result<i32, Error> {
    let config = Arc::new(load_config(&args.config)?);
    let tag = parse_tag(&args.dataset)?;
    let problems = load_problems(&config, &tag, &args.dataset_file)?;
    let client = build_client(&config)?;
    let runner = StrategyRunner::new(config.clone(), client)?;
    let table = prefix_study(&runner, &args.source, &problems, &args.problems, args.max_k).await?;
    let csv = render_prefix_study_csv(&table);
    println!(
        "prefix study: solved {}/{}; mean fraction episodes {}; mean fraction tokens {}",
        table.solved,
        table.total,
        table
            .mean_fraction_episodes
            .map(|f| format!("{f:.4}"))
            .unwrap_or_else(|| "-".into()),
        table
            .mean_fraction_tokens
            .map(|f| format!("{f:.4}"))
            .unwrap_or_else(|| "-".into()),
    );
    emit(&args.out, &csv)?;
    Ok(if table.solved == table.total { EXIT_OK } else { EXIT_PARTIAL })
}
