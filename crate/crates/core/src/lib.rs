//! Benchmark engine for measuring reasoning efficiency of chat-completions
//! models: strategy orchestration (solo, no-thinking, best-of-N, the
//! two-stage outline/expand pipeline, prefix completion), trace analysis,
//! math answer verification, resumable JSONL run stores, and the metric
//! suite (Pass@1, token cost, token efficiency, reasoning efficiency, win
//! rates, scaling references).

pub mod config;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod report;
pub mod runner;
pub mod store;
pub mod strategies;
pub mod trace;
pub mod verify;

pub use error::{Error, Result};
