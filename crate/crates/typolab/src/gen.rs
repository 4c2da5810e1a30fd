// SPDX-License-Identifier: MIT OR Apache-2.0

//! `gen`: corpus to perturbed dataset.

use std::collections::BTreeMap;

use log::info;
use serde::{Deserialize, Serialize};
use typolab_core::corpus::{load_corpus, select_targets};
use typolab_core::perturb::{build_matrix, write_dataset, write_jsonl, SkipRecord};
use typolab_core::tokenizer::VocabTokenizer;

use crate::config::{ExperimentConfig, TokenizerChoice};
use crate::error::{HarnessError, Result};
use crate::table::{prepare_dir, write_json};

pub const VOCAB_FILE: &str = "vocab.json";
pub const SKIPS_FILE: &str = "skips.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub passages: usize,
    pub candidates: usize,
    pub samples: usize,
    pub skips: usize,
    /// Skip count per error kind.
    pub skips_by_reason: BTreeMap<String, usize>,
    pub files: Vec<String>,
}

/// Error kind at the head of a skip reason.
pub(crate) fn reason_kind(reason: &str) -> &str {
    reason.split([' ', ':']).next().unwrap_or(reason)
}

pub fn run(cfg: &ExperimentConfig) -> Result<GenSummary> {
    let corpus_path = cfg
        .corpus
        .as_ref()
        .ok_or_else(|| HarnessError::Config("`corpus` is required for gen".into()))?;
    let corpus = load_corpus(corpus_path, cfg.corpus_format)?;
    let tokenizer = match &cfg.tokenizer {
        TokenizerChoice::Reference => VocabTokenizer::from_corpus(&corpus),
        TokenizerChoice::Vocab(path) => VocabTokenizer::load(path)?,
    };
    let candidates = select_targets(&corpus, &tokenizer, cfg.min_word_len);
    if candidates.is_empty() {
        return Err(HarnessError::NoCandidates {
            corpus: corpus_path.clone(),
            min_len: cfg.min_word_len,
        });
    }
    info!("{} of {} passages have a target word", candidates.len(), corpus.len());

    let mut samples = Vec::new();
    let mut skips: Vec<SkipRecord> = Vec::new();
    for cand in &candidates {
        let out = build_matrix(cand, &cfg.sr_levels, &cfg.ci_levels, &cfg.seeds)?;
        samples.extend(out.samples);
        skips.extend(out.skips);
    }

    let dir = cfg.dataset_dir();
    prepare_dir(&dir, |n| n.starts_with("dataset") && n.ends_with(".jsonl"))?;
    let files = write_dataset(&dir, &samples)?;
    tokenizer.save(&dir.join(VOCAB_FILE))?;
    write_jsonl(&dir.join(SKIPS_FILE), skips.iter())?;

    let mut skips_by_reason = BTreeMap::new();
    for s in &skips {
        *skips_by_reason.entry(reason_kind(&s.reason).to_owned()).or_insert(0) += 1;
    }
    let summary = GenSummary {
        passages: corpus.len(),
        candidates: candidates.len(),
        samples: samples.len(),
        skips: skips.len(),
        skips_by_reason,
        files,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    info!(
        "wrote {} samples and {} skips to {}",
        summary.samples,
        summary.skips,
        dir.display()
    );
    Ok(summary)
}
