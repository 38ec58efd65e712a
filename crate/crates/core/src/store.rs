//! Append-only run store: one strategy outcome per JSONL line, keyed by
//! (strategy, model_label, problem_id, sample_index).
//!
//! Line-delimited JSON keeps partially written runs readable after a crash
//! and diffs cleanly. Appends are serialized through a single writer; reads
//! work on a loaded snapshot, so store contents are independent of write
//! order.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dataset::ProblemSet;
use crate::domain::{Problem, Strategy, StrategyOutcome};
use crate::error::{Error, Result};

pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const META_FILE: &str = "run_meta.json";
pub const SCHEMA_VERSION: u32 = 1;

/// One stored line: the outcome plus its key fields and a schema version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredOutcome {
    pub schema_version: u32,
    pub model_label: String,
    pub sample_index: u32,
    #[serde(flatten)]
    pub outcome: StrategyOutcome,
}

/// Uniqueness key of one stored record.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OutcomeKey {
    pub strategy: Strategy,
    pub model_label: String,
    pub problem_id: String,
    pub sample_index: u32,
}

impl std::fmt::Display for OutcomeKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.strategy, self.model_label, self.problem_id, self.sample_index
        )
    }
}

impl StoredOutcome {
    pub fn key(&self) -> OutcomeKey {
        OutcomeKey {
            strategy: self.outcome.strategy,
            model_label: self.model_label.clone(),
            problem_id: self.outcome.problem_id.clone(),
            sample_index: self.sample_index,
        }
    }
}

/// Metadata written next to the outcomes file; used for provenance and to
/// guard resumed runs against mismatched invocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema_version: u32,
    pub strategy: Strategy,
    pub dataset: String,
    pub model_label: String,
    pub config_sha256: String,
    /// template name -> short content hash
    pub template_versions: BTreeMap<String, String>,
    pub created_at: chrono::DateTime<chrono::Utc>,
}

struct StoreInner {
    keys: std::collections::HashSet<OutcomeKey>,
    file: Option<std::fs::File>,
}

/// Append-only store over one run directory.
pub struct RunStore {
    run_dir: PathBuf,
    inner: Mutex<StoreInner>,
}

impl RunStore {
    /// Open (or create) the store under `run_dir`, indexing existing keys.
    pub fn open(run_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(run_dir)
            .map_err(|e| Error::io(format!("creating run dir {}", run_dir.display()), e))?;
        let existing = Self::load_all(run_dir)?;
        let keys = existing.iter().map(|r| r.key()).collect();
        Ok(RunStore {
            run_dir: run_dir.to_path_buf(),
            inner: Mutex::new(StoreInner { keys, file: None }),
        })
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    fn outcomes_path(run_dir: &Path) -> PathBuf {
        run_dir.join(OUTCOMES_FILE)
    }

    /// Durably append one outcome. Re-appending an existing key is rejected.
    pub fn append_outcome(
        &self,
        outcome: StrategyOutcome,
        model_label: &str,
        sample_index: u32,
    ) -> Result<()> {
        if let Err(msg) = outcome.check_invariants() {
            return Err(Error::Report(format!("refusing to store invalid outcome: {msg}")));
        }
        let record = StoredOutcome {
            schema_version: SCHEMA_VERSION,
            model_label: model_label.to_string(),
            sample_index,
            outcome,
        };
        let key = record.key();
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::serde("serializing outcome", e))?;

        let mut inner = self.inner.lock().expect("store mutex poisoned");
        if inner.keys.contains(&key) {
            return Err(Error::DuplicateOutcomeKey { key: key.to_string() });
        }
        if inner.file.is_none() {
            let path = Self::outcomes_path(&self.run_dir);
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
            inner.file = Some(file);
        }
        let file = inner.file.as_mut().unwrap();
        writeln!(file, "{line}").map_err(|e| Error::io("appending outcome", e))?;
        file.flush().map_err(|e| Error::io("flushing outcome", e))?;
        inner.keys.insert(key);
        Ok(())
    }

    pub fn contains(&self, key: &OutcomeKey) -> bool {
        self.inner.lock().expect("store mutex poisoned").keys.contains(key)
    }

    /// Load every stored record from a run directory, keyed and sorted.
    /// Duplicate keys on disk are corruption and rejected.
    pub fn load_all(run_dir: &Path) -> Result<Vec<StoredOutcome>> {
        let path = Self::outcomes_path(run_dir);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let file = std::fs::File::open(&path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let reader = std::io::BufReader::new(file);
        let mut by_key: BTreeMap<OutcomeKey, StoredOutcome> = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: StoredOutcome =
                serde_json::from_str(&line).map_err(|e| Error::CorruptStoreLine {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            if record.schema_version != SCHEMA_VERSION {
                return Err(Error::CorruptStoreLine {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: format!("unsupported schema_version {}", record.schema_version),
                });
            }
            let key = record.key();
            if by_key.insert(key.clone(), record).is_some() {
                return Err(Error::CorruptStoreLine {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: format!("duplicate key {key}"),
                });
            }
        }
        Ok(by_key.into_values().collect())
    }

    /// Problems in `problems` that lack a stored outcome under
    /// (strategy, model_label), in the problem set's order.
    pub fn pending_problems<'a>(
        &self,
        problems: &'a ProblemSet,
        strategy: Strategy,
        model_label: &str,
        sample_index: u32,
    ) -> Vec<&'a Problem> {
        let inner = self.inner.lock().expect("store mutex poisoned");
        problems
            .problems
            .iter()
            .filter(|p| {
                !inner.keys.contains(&OutcomeKey {
                    strategy,
                    model_label: model_label.to_string(),
                    problem_id: p.id.clone(),
                    sample_index,
                })
            })
            .collect()
    }

    pub fn write_meta(&self, meta: &RunMeta) -> Result<()> {
        let path = self.run_dir.join(META_FILE);
        let json = serde_json::to_string_pretty(meta)
            .map_err(|e| Error::serde("serializing run meta", e))?;
        std::fs::write(&path, json)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read_meta(run_dir: &Path) -> Result<Option<RunMeta>> {
        let path = run_dir.join(META_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let meta =
            serde_json::from_str(&text).map_err(|e| Error::serde("parsing run meta", e))?;
        Ok(Some(meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::*;
    use chrono::Utc;

    fn outcome(problem_id: &str, tokens: u64) -> StrategyOutcome {
        let call = GenerationRecord {
            call_id: format!("{problem_id}:c0"),
            model_name: "m".into(),
            role_of_model: ModelRole::Thinking,
            request_messages: vec![ChatMessage::user("q")],
            prefill_text: None,
            output_text: "\\boxed{1}".into(),
            completion_tokens: tokens,
            prompt_tokens: 4,
            token_source: TokenSource::ServerUsage,
            timestamp: Utc::now(),
        };
        StrategyOutcome {
            problem_id: problem_id.into(),
            strategy: Strategy::SoloThinking,
            calls: vec![call],
            total_generated_tokens: tokens,
            final_answer_text: "1".into(),
            verdict: Verdict::Correct,
            episode_count: None,
            selected_call: None,
            empty_outline: false,
            prefix: None,
            failed_candidates: vec![],
        }
    }

    fn problem_set(n: usize) -> ProblemSet {
        ProblemSet {
            dataset: DatasetTag::Custom("t".into()),
            problems: (0..n)
                .map(|i| Problem {
                    id: format!("p{i}"),
                    dataset: DatasetTag::Custom("t".into()),
                    statement: format!("s{i}"),
                    gold_answer: "1".into(),
                })
                .collect(),
            source_path: PathBuf::from("mem"),
        }
    }

    #[test]
    fn append_then_load_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        let o = outcome("p1", 30);
        store.append_outcome(o.clone(), "m", 0).unwrap();
        let loaded = RunStore::load_all(dir.path()).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].outcome, o);
        assert_eq!(loaded[0].model_label, "m");
        assert_eq!(loaded[0].schema_version, SCHEMA_VERSION);
    }

    #[test]
    fn duplicate_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        store.append_outcome(outcome("p1", 30), "m", 0).unwrap();
        let err = store.append_outcome(outcome("p1", 40), "m", 0).unwrap_err();
        assert!(matches!(err, Error::DuplicateOutcomeKey { .. }));
        // Distinct sample index is a distinct key.
        store.append_outcome(outcome("p1", 40), "m", 1).unwrap();
    }

    #[test]
    fn reopen_sees_existing_keys() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = RunStore::open(dir.path()).unwrap();
            store.append_outcome(outcome("p1", 30), "m", 0).unwrap();
        }
        let store = RunStore::open(dir.path()).unwrap();
        assert!(store
            .append_outcome(outcome("p1", 30), "m", 0)
            .is_err());
    }

    #[test]
    fn pending_problems_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        let set = problem_set(10);
        // Store 4 of 10.
        for i in [1usize, 3, 5, 9] {
            store.append_outcome(outcome(&format!("p{i}"), 10), "m", 0).unwrap();
        }
        let pending = store.pending_problems(&set, Strategy::SoloThinking, "m", 0);
        let ids: Vec<&str> = pending.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, vec!["p0", "p2", "p4", "p6", "p7", "p8"]);

        // Different model label: nothing stored.
        assert_eq!(store.pending_problems(&set, Strategy::SoloThinking, "other", 0).len(), 10);
    }

    #[test]
    fn pending_empty_and_full_cases() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        let set = problem_set(3);
        assert_eq!(store.pending_problems(&set, Strategy::SoloThinking, "m", 0).len(), 3);
        for i in 0..3 {
            store.append_outcome(outcome(&format!("p{i}"), 10), "m", 0).unwrap();
        }
        assert!(store.pending_problems(&set, Strategy::SoloThinking, "m", 0).is_empty());
    }

    #[test]
    fn concurrent_appends_under_distinct_keys_all_land() {
        let dir = tempfile::tempdir().unwrap();
        let store = std::sync::Arc::new(RunStore::open(dir.path()).unwrap());
        let mut handles = Vec::new();
        for t in 0..8 {
            let store = store.clone();
            handles.push(std::thread::spawn(move || {
                for i in 0..25 {
                    store
                        .append_outcome(outcome(&format!("p{t}-{i}"), 10), "m", 0)
                        .unwrap();
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        let loaded = RunStore::load_all(dir.path()).unwrap();
        assert_eq!(loaded.len(), 200);
    }

    #[test]
    fn load_is_independent_of_write_order() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let store_a = RunStore::open(dir_a.path()).unwrap();
        let store_b = RunStore::open(dir_b.path()).unwrap();
        let outcomes: Vec<StrategyOutcome> =
            (0..5).map(|i| outcome(&format!("p{i}"), 10 + i as u64)).collect();
        for o in &outcomes {
            store_a.append_outcome(o.clone(), "m", 0).unwrap();
        }
        for o in outcomes.iter().rev() {
            store_b.append_outcome(o.clone(), "m", 0).unwrap();
        }
        let a = RunStore::load_all(dir_a.path()).unwrap();
        let b = RunStore::load_all(dir_b.path()).unwrap();
        assert_eq!(a, b);
    }
}
