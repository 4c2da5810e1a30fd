// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment harness: dataset generation, reference-model runs, dump
//! validation, metric tables and plot-data bundles.
//!
//! Each stage reads the previous stage's files under the configured output
//! directory:
//!
//! ```text
//! out/dataset/   dataset*.jsonl, vocab.json, skips.jsonl, summary.json
//! out/dumps/     manifest.json, rec*.actd, run_skips.jsonl
//! out/metrics/   *.csv, skips.jsonl, metrics_meta.json
//! out/report/    *.json plot bundles
//! ```

pub mod config;
pub mod error;
pub mod gen;
pub mod metrics;
pub mod report;
pub mod run_ref;
pub mod table;
pub mod validate;

pub use config::{ExperimentConfig, Overrides};
pub use error::{HarnessError, Result};
