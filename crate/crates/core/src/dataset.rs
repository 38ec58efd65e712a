//! Problem set loading from JSONL files.
//!
//! One problem per line: `{"id", "dataset", "statement", "gold_answer"}`.
//! Registered tags enforce their expected sizes — silent truncation would
//! corrupt Pass@1, so a mismatch is an error, not a warning.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::domain::{DatasetTag, Problem};
use crate::error::{Error, Result};

/// An ordered, validated set of problems.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSet {
    pub dataset: DatasetTag,
    pub problems: Vec<Problem>,
    pub source_path: PathBuf,
}

impl ProblemSet {
    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }
}

#[derive(Debug, Deserialize)]
struct ProblemLine {
    id: String,
    dataset: String,
    statement: String,
    gold_answer: String,
}

/// Load a problem JSONL file under the given tag.
///
/// Errors carry the offending line number. Lines whose `dataset` field
/// disagrees with `tag` are malformed.
pub fn load_dataset(path: &Path, tag: DatasetTag) -> Result<ProblemSet> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening dataset {}", path.display()), e))?;
    let reader = std::io::BufReader::new(file);

    let mut problems = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(format!("reading dataset {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ProblemLine = serde_json::from_str(&line).map_err(|e| Error::MalformedDatasetLine {
            path: path.display().to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        let line_tag = DatasetTag::parse(&parsed.dataset).map_err(|e| Error::MalformedDatasetLine {
            path: path.display().to_string(),
            line: line_no,
            message: e,
        })?;
        if line_tag != tag {
            return Err(Error::MalformedDatasetLine {
                path: path.display().to_string(),
                line: line_no,
                message: format!("dataset field `{line_tag}` does not match requested tag `{tag}`"),
            });
        }
        if parsed.id.is_empty() {
            return Err(Error::MalformedDatasetLine {
                path: path.display().to_string(),
                line: line_no,
                message: "empty problem id".into(),
            });
        }
        if parsed.gold_answer.is_empty() {
            return Err(Error::MalformedDatasetLine {
                path: path.display().to_string(),
                line: line_no,
                message: format!("problem `{}` has an empty gold_answer", parsed.id),
            });
        }
        if !seen_ids.insert(parsed.id.clone()) {
            return Err(Error::DuplicateProblemId {
                path: path.display().to_string(),
                id: parsed.id,
            });
        }
        problems.push(Problem {
            id: parsed.id,
            dataset: tag.clone(),
            statement: parsed.statement,
            gold_answer: parsed.gold_answer,
        });
    }

    if let Some(expected) = tag.registered_size() {
        if problems.len() != expected {
            return Err(Error::DatasetCountMismatch {
                path: path.display().to_string(),
                tag: tag.to_string(),
                expected,
                actual: problems.len(),
            });
        }
    }

    Ok(ProblemSet { dataset: tag, problems, source_path: path.to_path_buf() })
}
