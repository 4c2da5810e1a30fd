// SPDX-License-Identifier: MIT OR Apache-2.0

//! `run-ref`: dataset to activation dumps through the reference transformer.

use std::collections::BTreeMap;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use typolab_core::metrics::ConsistencyKey;
use typolab_core::perturb::{read_dataset, write_jsonl, PerturbedSample, SkipRecord, COMBINED_DATASET};
use typolab_core::refmodel::{RefModel, RefModelConfig};
use typolab_core::store::{ActivationDump, DumpManifest, DumpRecordMeta, DumpWriter, MANIFEST_FILE};
use typolab_core::tokenizer::{locate_subword_span, Tokenizer, VocabTokenizer};

use crate::config::{ExperimentConfig, ModelSource};
use crate::error::{HarnessError, Result};
use crate::gen::VOCAB_FILE;
use crate::table::{prepare_dir, write_json};

pub const RUN_SKIPS_FILE: &str = "run_skips.jsonl";
pub const RUN_SUMMARY_FILE: &str = "run_summary.json";

/// Dataset samples processed per parallel batch; bounds peak memory.
const BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model_name: String,
    pub parameter_count: usize,
    pub samples: usize,
    pub written: usize,
    pub synthesized_baselines: usize,
    pub skipped: usize,
}

pub fn model_name(c: &RefModelConfig) -> String {
    format!(
        "typolab-refmodel-l{}-h{}-d{}-ff{}-v{}-seed{}",
        c.n_layers, c.n_heads, c.d_model, c.d_ff, c.vocab_size, c.init_seed
    )
}

fn key_of(s: &PerturbedSample) -> ConsistencyKey {
    ConsistencyKey {
        sample_id: s.sample_id.clone(),
        ci: s.ci(),
        seed: s.seed(),
    }
}

fn skip(s: &PerturbedSample, what: &str, err: &typolab_core::Error) -> SkipRecord {
    SkipRecord {
        sample_id: s.sample_id.clone(),
        reason: format!(
            "{} ({what}sr={} ci={} seed={}): {err}",
            err.kind(),
            s.sr(),
            s.ci(),
            s.seed()
        ),
    }
}

struct Job {
    sample: PerturbedSample,
    synthesized: bool,
}

/// Tokenize, locate the target span and run the forward pass.
fn process(
    model: &RefModel,
    tok: &VocabTokenizer,
    job: &Job,
) -> typolab_core::Result<(DumpRecordMeta, ActivationDump)> {
    let s = &job.sample;
    let tokens = tok.encode(&s.prompt())?;
    let ids: Vec<u32> = tokens.iter().map(|t| t.id).collect();
    let span = locate_subword_span(&tokens, s.target_char_range())?;
    let dump = model.forward(&ids, span)?;
    let mut meta = DumpRecordMeta::pending(&s.sample_id, s.sr(), s.ci(), s.seed(), ids.len(), span, "");
    meta.synthesized_baseline = job.synthesized;
    Ok((meta, dump))
}

/// Dataset samples first, then one SR = 0 baseline for every key that lacks one.
fn plan(samples: Vec<PerturbedSample>) -> Vec<Job> {
    let mut needs: BTreeMap<ConsistencyKey, Option<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let entry = needs.entry(key_of(s)).or_insert(Some(i));
        if s.sr().is_zero() {
            *entry = None;
        }
    }
    let synth: Vec<Job> = needs
        .values()
        .flatten()
        .map(|&i| Job {
            sample: samples[i].baseline(),
            synthesized: true,
        })
        .collect();
    samples
        .into_iter()
        .map(|sample| Job {
            sample,
            synthesized: false,
        })
        .chain(synth)
        .collect()
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let ModelSource::Refmodel(model_cfg) = &cfg.model else {
        return Err(HarnessError::Config(
            "model source is a dump directory; run-ref needs a refmodel config".into(),
        ));
    };
    let data = cfg.dataset_dir();
    let samples = read_dataset(&data.join(COMBINED_DATASET))?;
    let tok = VocabTokenizer::load(&data.join(VOCAB_FILE))?;
    let mut model_cfg = model_cfg.clone();
    if model_cfg.vocab_size == 0 {
        model_cfg.vocab_size = tok.vocab_size();
    } else if model_cfg.vocab_size != tok.vocab_size() {
        return Err(HarnessError::Config(format!(
            "refmodel vocab_size {} does not match the tokenizer's {}",
            model_cfg.vocab_size,
            tok.vocab_size()
        )));
    }
    let model = RefModel::new(model_cfg.clone())?;
    let name = model_name(&model_cfg);
    info!("{name}: {} parameters", model.parameter_count());

    let n_samples = samples.len();
    let jobs = plan(samples);
    let n_synth = jobs.len() - n_samples;

    let dir = cfg.dumps_dir();
    prepare_dir(&dir, |n| n.ends_with(".actd") || n == MANIFEST_FILE)?;
    let manifest = DumpManifest::new(
        name.clone(),
        model_cfg.n_layers,
        model_cfg.n_heads,
        model_cfg.d_model,
        model_cfg.vocab_size,
    );
    let mut writer = DumpWriter::create(&dir, manifest)?;
    let mut skips = Vec::new();
    let mut skipped_samples = 0usize;
    let mut written = 0usize;
    for batch in jobs.chunks(BATCH) {
        let results: Vec<_> = batch.par_iter().map(|job| process(&model, &tok, job)).collect();
        for (job, res) in batch.iter().zip(results) {
            match res {
                Ok((mut meta, dump)) => {
                    meta.file = format!("rec{written:06}.actd");
                    writer.add(&meta, &dump)?;
                    written += 1;
                }
                Err(e) => {
                    let what = if job.synthesized { "baseline " } else { "" };
                    warn!("skipping {}: {e}", job.sample.sample_id);
                    skips.push(skip(&job.sample, what, &e));
                    if !job.synthesized {
                        skipped_samples += 1;
                    }
                }
            }
        }
    }
    write_jsonl(&dir.join(RUN_SKIPS_FILE), skips.iter())?;
    if skipped_samples * 2 > n_samples {
        return Err(HarnessError::SkipThreshold {
            skipped: skipped_samples,
            total: n_samples,
            limit: "50%",
        });
    }
    writer.commit()?;

    let summary = RunSummary {
        model_name: name,
        parameter_count: model.parameter_count(),
        samples: n_samples,
        written,
        synthesized_baselines: n_synth,
        skipped: skips.len(),
    };
    write_json(&dir.join(RUN_SUMMARY_FILE), &summary)?;
    info!("wrote {written} dumps to {}", dir.display());
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use typolab_core::corpus::TargetCandidate;
    use typolab_core::perturb::build_matrix;
    use typolab_core::Level;

    fn samples(sr: &[f64]) -> Vec<PerturbedSample> {
        let words: Vec<String> = "we saw an extraordinary sight".split(' ').map(String::from).collect();
        let cand = TargetCandidate {
            sample_id: "s".into(),
            text: words,
            target_index: 3,
            target_word: "extraordinary".into(),
        };
        let lv = |v: &[f64]| v.iter().map(|&x| Level::new(x).unwrap()).collect::<Vec<_>>();
        build_matrix(&cand, &lv(sr), &lv(&[0.5, 1.0]), &[1]).unwrap().samples
    }

    #[test]
    fn baselines_only_where_missing() {
        let jobs = plan(samples(&[0.0, 1.0]));
        assert_eq!(jobs.len(), 4);
        assert!(jobs.iter().all(|j| !j.synthesized));

        let jobs = plan(samples(&[0.5, 1.0]));
        assert_eq!(jobs.len(), 6);
        let synth: Vec<_> = jobs.iter().filter(|j| j.synthesized).collect();
        assert_eq!(synth.len(), 2);
        for j in synth {
            assert!(j.sample.sr().is_zero());
            assert_eq!(j.sample.scrambled_word, "extraordinary");
        }
    }
}
