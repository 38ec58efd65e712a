//! Resume-aware execution of one strategy over a problem set.
//!
//! Problems already present in the store are skipped; the rest run
//! concurrently under the inference module's in-flight bound, and results
//! funnel to the store's single serialized writer. Per-problem failures are
//! collected without aborting the run, except a connectivity failure on the
//! very first call, which aborts before anything is written.

use std::sync::Arc;

use crate::dataset::ProblemSet;
use crate::domain::{ModelRole, Problem, Strategy};
use crate::error::{Error, Result};
use crate::store::RunStore;
use crate::strategies::StrategyRunner;

/// What happened during one `execute_run`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub model_label: String,
    /// Inference calls issued during this invocation.
    pub issued_calls: u64,
    /// Problems skipped because an outcome was already stored.
    pub skipped: usize,
    /// Outcomes appended this invocation.
    pub completed: usize,
    /// (problem id, error) for problems that failed.
    pub failures: Vec<(String, String)>,
}

/// Run `strategy` over every pending problem of `problems`, appending
/// outcomes to `store`.
pub async fn execute_run(
    runner: &StrategyRunner,
    store: &RunStore,
    problems: &ProblemSet,
    strategy: Strategy,
    solo_role: ModelRole,
    sample_index: u32,
) -> Result<RunSummary> {
    let model_label = runner.model_label(strategy, solo_role).to_string();
    let pending: Vec<Problem> = store
        .pending_problems(problems, strategy, &model_label, sample_index)
        .into_iter()
        .cloned()
        .collect();
    let skipped = problems.len() - pending.len();
    let issued_before = runner.client().calls_issued();

    let mut completed = 0usize;
    let mut failures: Vec<(String, String)> = Vec::new();

    let mut rest = pending.iter();
    // The first pending problem runs alone: an unreachable endpoint aborts
    // here with nothing written.
    if let Some(first) = rest.next() {
        match runner.run(strategy, solo_role, first).await {
            Ok(outcome) => {
                store.append_outcome(outcome, &model_label, sample_index)?;
                completed += 1;
            }
            Err(e) if e.is_connectivity() => return Err(e),
            Err(e) => failures.push((first.id.clone(), e.to_string())),
        }
    }

    let remaining: Vec<&Problem> = rest.collect();
    let results = futures::future::join_all(
        remaining.iter().map(|p| runner.run(strategy, solo_role, p)),
    )
    .await;
    for (problem, result) in remaining.iter().zip(results) {
        match result {
            Ok(outcome) => match store.append_outcome(outcome, &model_label, sample_index) {
                Ok(()) => completed += 1,
                Err(e) => failures.push((problem.id.clone(), e.to_string())),
            },
            Err(e) => failures.push((problem.id.clone(), e.to_string())),
        }
    }

    failures.sort();
    Ok(RunSummary {
        strategy,
        model_label,
        issued_calls: runner.client().calls_issued() - issued_before,
        skipped,
        completed,
        failures,
    })
}

/// Build a client for the config: the scripted in-process mock when
/// `mock_script` is set, the HTTP backend otherwise.
pub fn build_client(config: &crate::config::RunConfig) -> Result<Arc<crate::inference::Client>> {
    let backend = match &config.mock_script {
        Some(path) => {
            let script = crate::inference::MockScript::load(path)?;
            crate::inference::Backend::Mock(crate::inference::MockBackend::new(script))
        }
        None => crate::inference::Backend::Http(crate::inference::http::HttpBackend::new(
            std::time::Duration::from_secs(config.http.timeout_secs),
        )?),
    };
    Ok(Arc::new(crate::inference::Client::new(backend, config.concurrency_limit)))
}

/// Sha256 of a file's bytes, hex-encoded.
pub fn file_sha256(path: &std::path::Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)
        .map_err(|e| Error::io(format!("hashing {}", path.display()), e))?;
    Ok(hex_string(&Sha256::digest(&bytes)))
}

/// Short content hash used to version prompt templates in run metadata.
pub fn template_version(text: &str) -> String {
    use sha2::{Digest, Sha256};
    hex_string(&Sha256::digest(text.as_bytes()))[..12].to_string()
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
