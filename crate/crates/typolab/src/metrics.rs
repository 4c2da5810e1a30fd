// SPDX-License-Identifier: MIT OR Apache-2.0

//! `metrics`: dumps to CSV tables.
//!
//! Every record is read and scored in parallel; all tables are then written
//! in manifest order, so output bytes do not depend on scheduling.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use typolab_core::metrics::{
    attention_self, consistency_records, form_sensitive_heads, head_heatmap, head_set_stability, layer_stats,
    neg_corr_rate, realizable_deltas, sem_rec_score, AttentionSelf, AttentionSelfRecord, ConsistencyKey, HeadHeatmap,
    NegCorrMode,
};
use typolab_core::perturb::{write_jsonl, SkipRecord};
use typolab_core::store::{ActivationDump, DumpManifest, DumpRecordMeta};
use typolab_core::Level;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::table::{fmt_num, prepare_dir, write_json, CsvOut};

pub const SEMREC: &str = "semrec.csv";
pub const LAYER_CURVES: &str = "layer_curves.csv";
pub const CONSISTENCY: &str = "consistency.csv";
pub const NEGCORR: &str = "negcorr.csv";
pub const ATTNSELF: &str = "attnself.csv";
pub const ATTNSELF_CURVES: &str = "attnself_curves.csv";
pub const FORM_HEADS: &str = "form_heads.csv";
pub const HEAD_STABILITY: &str = "head_stability.csv";
pub const METRICS_SKIPS: &str = "skips.jsonl";
pub const METRICS_META: &str = "metrics_meta.json";

/// `heatmap_sr{level}.csv`
pub fn heatmap_file_name(sr: Level) -> String {
    format!("heatmap_sr{sr}.csv")
}

/// Facts about a metrics run that the report stage needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsMeta {
    pub model_name: String,
    pub n_layers: usize,
    pub n_heads: usize,
    pub records: usize,
    pub samples_scored: usize,
    pub synthesized_baselines: usize,
    pub skipped: usize,
    pub sr_levels: Vec<Level>,
    pub ci_levels: Vec<Level>,
    pub negcorr_mode: NegCorrMode,
    pub top_k: usize,
    /// CI level the heatmaps were computed at.
    pub attention_ci: Option<Level>,
    pub heatmap_files: Vec<String>,
}

fn key_of(m: &DumpRecordMeta) -> ConsistencyKey {
    ConsistencyKey {
        sample_id: m.sample_id.clone(),
        ci: m.ci,
        seed: m.seed,
    }
}

fn cell(m: &DumpRecordMeta) -> String {
    format!("sr={} ci={} seed={}", m.sr, m.ci, m.seed)
}

/// Read every record, failing on the first invalid one after listing all of them.
fn load_all(manifest: &DumpManifest, dir: &std::path::Path) -> Result<Vec<ActivationDump>> {
    let mut seen = HashSet::new();
    if let Some(dup) = manifest.records.iter().find(|m| !seen.insert(&m.file)) {
        return Err(HarnessError::Data(format!(
            "{} is referenced by more than one manifest record",
            dup.file
        )));
    }
    let results: Vec<_> = manifest
        .records
        .par_iter()
        .map(|m| manifest.read_record(m, dir))
        .collect();
    let mut dumps = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for (m, r) in manifest.records.iter().zip(results) {
        match r {
            Ok(d) => dumps.push(d),
            Err(e) => errors.push(format!("{}: {}: {e}", m.file, e.kind())),
        }
    }
    if !errors.is_empty() {
        let n = errors.len();
        errors.truncate(5);
        return Err(HarnessError::Data(format!(
            "{n} invalid dump record(s) in {}; first: {}",
            dir.display(),
            errors.join("; ")
        )));
    }
    Ok(dumps)
}

struct Scored {
    scores: Vec<f64>,
    attn: AttentionSelf,
}

pub fn run(cfg: &ExperimentConfig) -> Result<MetricsMeta> {
    let dir = cfg.dumps_dir();
    let manifest = DumpManifest::load(&dir)?;
    let dumps = load_all(&manifest, &dir)?;
    let records = &manifest.records;
    let mut skips: Vec<SkipRecord> = Vec::new();

    // Baseline per key: a dataset SR = 0 record wins over a synthesized one.
    let mut baseline: BTreeMap<ConsistencyKey, usize> = BTreeMap::new();
    for (i, m) in records.iter().enumerate() {
        if !m.sr.is_zero() {
            continue;
        }
        let slot = baseline.entry(key_of(m)).or_insert(i);
        if records[*slot].synthesized_baseline && !m.synthesized_baseline {
            *slot = i;
        }
    }
    let samples: Vec<usize> = (0..records.len())
        .filter(|&i| !records[i].synthesized_baseline)
        .collect();

    let missing: BTreeSet<String> = samples
        .iter()
        .map(|&i| key_of(&records[i]))
        .filter(|k| !baseline.contains_key(k))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() && !cfg.allow_partial {
        return Err(HarnessError::BaselineMissing(missing.into_iter().collect()));
    }

    let scored: Vec<Option<typolab_core::Result<Scored>>> = samples
        .par_iter()
        .map(|&i| {
            let base = *baseline.get(&key_of(&records[i]))?;
            Some(sem_rec_score(&dumps[base], &dumps[i]).map(|scores| Scored {
                scores,
                attn: attention_self(&dumps[i]),
            }))
        })
        .collect();

    let mut ok: Vec<(usize, Scored)> = Vec::with_capacity(samples.len());
    for (&i, s) in samples.iter().zip(scored) {
        let m = &records[i];
        match s {
            Some(Ok(s)) => ok.push((i, s)),
            Some(Err(e)) if cfg.allow_partial => skips.push(SkipRecord {
                sample_id: m.sample_id.clone(),
                reason: format!("{} ({}): {e}", e.kind(), cell(m)),
            }),
            Some(Err(e)) => {
                return Err(HarnessError::Data(format!("{} ({}): {e}", m.file, cell(m))));
            }
            None => skips.push(SkipRecord {
                sample_id: m.sample_id.clone(),
                reason: format!("BaselineMissing ({}): no SR = 0 record for {}", cell(m), key_of(m)),
            }),
        }
    }

    let out = cfg.metrics_dir();
    prepare_dir(&out, |n| n.ends_with(".csv") || n == METRICS_SKIPS || n == METRICS_META)?;

    // semrec.csv and layer_curves.csv
    let mut t = CsvOut::create(&out.join(SEMREC), &["sample_id", "sr", "ci", "seed", "layer", "score"])?;
    let mut by_cond: BTreeMap<(Level, Level), Vec<usize>> = BTreeMap::new();
    for (pos, (i, s)) in ok.iter().enumerate() {
        let m = &records[*i];
        for (layer, v) in s.scores.iter().enumerate() {
            t.row([
                m.sample_id.clone(),
                m.sr.to_string(),
                m.ci.to_string(),
                m.seed.to_string(),
                layer.to_string(),
                fmt_num(*v),
            ])?;
        }
        by_cond.entry((m.sr, m.ci)).or_default().push(pos);
    }
    t.finish()?;
    write_curves(&out.join(LAYER_CURVES), &by_cond, |pos| &ok[pos].1.scores)?;

    // consistency.csv and negcorr.csv
    let mut synth_scores: BTreeMap<usize, f64> = BTreeMap::new();
    for &b in baseline.values() {
        if records[b].synthesized_baseline {
            let s = sem_rec_score(&dumps[b], &dumps[b])?;
            synth_scores.insert(b, *s.last().expect("at least one layer"));
        }
    }
    let entries = ok
        .iter()
        .map(|(i, s)| (*i, *s.scores.last().expect("at least one layer")))
        .chain(synth_scores.iter().map(|(&b, &v)| (b, v)))
        .map(|(i, score)| (key_of(&records[i]), records[i].sr, score, dumps[i].next_token_dist()));
    let (cons, _, failures) = consistency_records(entries);
    if let Some((key, e)) = failures.first() {
        if !cfg.allow_partial {
            return Err(HarnessError::Data(format!("consistency for {key}: {e}")));
        }
    }
    for (key, e) in &failures {
        skips.push(SkipRecord {
            sample_id: key.sample_id.clone(),
            reason: format!("{} (ci={} seed={}): {e}", e.kind(), key.ci, key.seed),
        });
    }
    let mut t = CsvOut::create(&out.join(CONSISTENCY), &["key", "sr", "final_score", "kldiv"])?;
    for r in &cons {
        for p in &r.points {
            t.row([
                r.key.to_string(),
                p.sr.to_string(),
                fmt_num(p.final_score),
                fmt_num(p.kldiv),
            ])?;
        }
    }
    t.finish()?;

    let sr_present: BTreeSet<Level> = cons.iter().flat_map(|r| r.points.iter().map(|p| p.sr)).collect();
    let sr_present: Vec<Level> = sr_present.into_iter().collect();
    let mut t = CsvOut::create(&out.join(NEGCORR), &["delta_sr", "mode", "rate", "n_pairs"])?;
    for delta in realizable_deltas(&sr_present) {
        for mode in [NegCorrMode::PerWord, NegCorrMode::Pooled] {
            match neg_corr_rate(&cons, delta, mode) {
                Ok(r) => t.row([
                    fmt_num(delta),
                    mode.as_str().into(),
                    fmt_num(r.rate),
                    r.n_pairs.to_string(),
                ])?,
                Err(e) => warn!("negcorr at delta {delta}: {e}"),
            }
        }
    }
    t.finish()?;

    // attnself.csv and attnself_curves.csv
    let mut t = CsvOut::create(
        &out.join(ATTNSELF),
        &["sample_id", "sr", "ci", "seed", "layer", "aggregate"],
    )?;
    for (i, s) in &ok {
        let m = &records[*i];
        for (layer, v) in s.attn.aggregate.iter().enumerate() {
            t.row([
                m.sample_id.clone(),
                m.sr.to_string(),
                m.ci.to_string(),
                m.seed.to_string(),
                layer.to_string(),
                fmt_num(*v),
            ])?;
        }
    }
    t.finish()?;
    write_curves(&out.join(ATTNSELF_CURVES), &by_cond, |pos| &ok[pos].1.attn.aggregate)?;

    // Heatmaps, form-sensitive heads and their stability across SR.
    let attention_ci = cfg
        .attention_ci
        .or_else(|| ok.iter().map(|(i, _)| records[*i].ci).max());
    let mut heatmaps: Vec<HeadHeatmap> = Vec::new();
    if let Some(ci) = attention_ci {
        let mut by_sr: BTreeMap<Level, Vec<AttentionSelfRecord>> = BTreeMap::new();
        for (i, s) in &ok {
            let m = &records[*i];
            if m.ci == ci {
                by_sr.entry(m.sr).or_default().push(AttentionSelfRecord {
                    sample_id: m.sample_id.clone(),
                    sr: m.sr,
                    ci: m.ci,
                    seed: m.seed,
                    values: s.attn.clone(),
                });
            }
        }
        for recs in by_sr.values() {
            heatmaps.push(head_heatmap(recs)?);
        }
    }
    let mut heatmap_files = Vec::new();
    for h in &heatmaps {
        let name = heatmap_file_name(h.sr);
        let mut t = CsvOut::create(&out.join(&name), &["layer", "head", "mean", "n"])?;
        for layer in 0..h.n_layers {
            for head in 0..h.n_heads {
                t.row([
                    layer.to_string(),
                    head.to_string(),
                    fmt_num(h.get(layer, head)),
                    h.samples.to_string(),
                ])?;
            }
        }
        t.finish()?;
        heatmap_files.push(name);
    }
    let mut t = CsvOut::create(&out.join(FORM_HEADS), &["sr", "rank", "layer", "head", "value"])?;
    let mut top_sets = Vec::new();
    for h in &heatmaps {
        let top = form_sensitive_heads(h, cfg.top_k);
        for (rank, c) in top.iter().enumerate() {
            t.row([
                h.sr.to_string(),
                (rank + 1).to_string(),
                c.layer.to_string(),
                c.head.to_string(),
                fmt_num(c.value),
            ])?;
        }
        let set: BTreeSet<(usize, usize)> = top.iter().map(|c| (c.layer, c.head)).collect();
        top_sets.push((h.sr, set));
    }
    t.finish()?;
    let mut t = CsvOut::create(&out.join(HEAD_STABILITY), &["sr_a", "sr_b", "k", "jaccard"])?;
    for (a, (sr_a, set_a)) in top_sets.iter().enumerate() {
        for (sr_b, set_b) in &top_sets[a + 1..] {
            let j = head_set_stability(set_a, set_b)?;
            t.row([sr_a.to_string(), sr_b.to_string(), set_a.len().to_string(), fmt_num(j)])?;
        }
    }
    t.finish()?;

    write_jsonl(&out.join(METRICS_SKIPS), skips.iter())?;
    let ci_present: BTreeSet<Level> = ok.iter().map(|(i, _)| records[*i].ci).collect();
    let meta = MetricsMeta {
        model_name: manifest.model_name.clone(),
        n_layers: manifest.n_layers,
        n_heads: manifest.n_heads,
        records: records.len(),
        samples_scored: ok.len(),
        synthesized_baselines: records.len() - samples.len(),
        skipped: skips.len(),
        sr_levels: ok
            .iter()
            .map(|(i, _)| records[*i].sr)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
        ci_levels: ci_present.into_iter().collect(),
        negcorr_mode: cfg.negcorr_mode,
        top_k: cfg.top_k,
        attention_ci,
        heatmap_files,
    };
    write_json(&out.join(METRICS_META), &meta)?;
    info!(
        "scored {} samples ({} skipped) into {}",
        meta.samples_scored,
        meta.skipped,
        out.display()
    );
    Ok(meta)
}

/// Per-(sr, ci, layer) mean, population std and count.
fn write_curves<'a>(
    path: &std::path::Path,
    groups: &BTreeMap<(Level, Level), Vec<usize>>,
    curve: impl Fn(usize) -> &'a [f64],
) -> Result<()> {
    let mut t = CsvOut::create(path, &["sr", "ci", "layer", "mean", "std", "n"])?;
    for ((sr, ci), members) in groups {
        let curves: Vec<&[f64]> = members.iter().map(|&p| curve(p)).collect();
        let stats = layer_stats(&curves)?;
        for (layer, (m, s)) in stats.mean.iter().zip(&stats.std).enumerate() {
            t.row([
                sr.to_string(),
                ci.to_string(),
                layer.to_string(),
                fmt_num(*m),
                fmt_num(*s),
                stats.n.to_string(),
            ])?;
        }
    }
    t.finish()
}
