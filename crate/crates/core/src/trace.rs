//! Think-segment extraction and episode segmentation.
//!
//! Raw model output is split into a think segment and an answer segment.
//! The think segment is then partitioned into episodes at marker phrases
//! ("let me verify", ...) supplied as case-insensitive regex patterns.

use regex::{Regex, RegexBuilder};

use crate::domain::StrategyOutcome;
use crate::error::{Error, Result};

/// Raw output split at the first think block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitTrace {
    /// Content between the first open tag and its close tag, tags excluded.
    pub think_text: String,
    /// Everything outside the first think block.
    pub answer_text: String,
    pub had_think_tags: bool,
}

/// One segment of the think text. Concatenating episode texts in index order
/// reproduces the think text byte for byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub index: usize,
    pub text: String,
    /// Matched marker text at the start of this episode; absent for episode 0.
    pub start_marker: Option<String>,
}

/// Compile one marker pattern, case-insensitive.
pub fn compile_marker(pattern: &str) -> Result<Regex> {
    RegexBuilder::new(pattern)
        .case_insensitive(true)
        .build()
        .map_err(|e| Error::InvalidMarkerPattern {
            pattern: pattern.to_string(),
            message: e.to_string(),
        })
}

/// Split raw output into think and answer segments.
///
/// Only the first think block counts; later blocks stay in the answer text.
/// An unclosed open tag claims the entire remainder as think text, so the
/// cost of a truncated generation is attributed to reasoning.
pub fn split_think(raw_output: &str, open_tag: &str, close_tag: &str) -> SplitTrace {
    debug_assert!(!open_tag.is_empty() && !close_tag.is_empty() && open_tag != close_tag);

    let Some(open_at) = raw_output.find(open_tag) else {
        return SplitTrace {
            think_text: String::new(),
            answer_text: raw_output.to_string(),
            had_think_tags: false,
        };
    };
    let before = &raw_output[..open_at];
    let after_open = &raw_output[open_at + open_tag.len()..];
    match after_open.find(close_tag) {
        Some(close_at) => SplitTrace {
            think_text: after_open[..close_at].to_string(),
            answer_text: format!("{before}{}", &after_open[close_at + close_tag.len()..]),
            had_think_tags: true,
        },
        None => SplitTrace {
            think_text: after_open.to_string(),
            answer_text: before.to_string(),
            had_think_tags: true,
        },
    }
}

/// Partition think text into episodes at marker matches.
///
/// Each pattern is scanned independently left to right (non-overlapping
/// within itself); the distinct match start offsets form the episode
/// boundaries. Episode 0 runs from the start of the text to the first
/// boundary and may be empty when a marker sits at offset 0. Scanning
/// patterns independently keeps the boundary set monotone: adding a pattern
/// can only add boundaries.
pub fn segment_episodes(think_text: &str, markers: &[String]) -> Result<Vec<Episode>> {
    let compiled: Vec<Regex> = markers
        .iter()
        .map(|p| compile_marker(p))
        .collect::<Result<_>>()?;

    if think_text.is_empty() {
        return Ok(Vec::new());
    }

    // offset -> matched marker text; first pattern in config order wins a
    // shared offset.
    let mut boundaries: std::collections::BTreeMap<usize, String> = std::collections::BTreeMap::new();
    for re in &compiled {
        for m in re.find_iter(think_text) {
            if m.is_empty() {
                continue;
            }
            boundaries.entry(m.start()).or_insert_with(|| m.as_str().to_string());
        }
    }

    let mut episodes = Vec::with_capacity(boundaries.len() + 1);
    let mut cursor = 0usize;
    let mut prev_marker: Option<String> = None;
    for (&start, marker) in &boundaries {
        episodes.push(Episode {
            index: episodes.len(),
            text: think_text[cursor..start].to_string(),
            start_marker: prev_marker.take(),
        });
        cursor = start;
        prev_marker = Some(marker.clone());
    }
    episodes.push(Episode {
        index: episodes.len(),
        text: think_text[cursor..].to_string(),
        start_marker: prev_marker,
    });
    Ok(episodes)
}

/// Episode count of a bare output text: the think segment is extracted and
/// segmented; `None` when there is no think block or it is empty.
pub fn episode_count_of_text(
    output_text: &str,
    open_tag: &str,
    close_tag: &str,
    markers: &[String],
) -> Result<Option<u32>> {
    let split = split_think(output_text, open_tag, close_tag);
    if !split.had_think_tags || split.think_text.is_empty() {
        return Ok(None);
    }
    let episodes = segment_episodes(&split.think_text, markers)?;
    Ok(Some(episodes.len() as u32))
}

/// Episode count over the outcome's answer-producing call.
pub fn episode_count(
    outcome: &StrategyOutcome,
    open_tag: &str,
    close_tag: &str,
    markers: &[String],
) -> Result<Option<u32>> {
    let Some(call) = outcome.answer_call() else {
        return Ok(None);
    };
    episode_count_of_text(&call.output_text, open_tag, close_tag, markers)
}
