// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use typolab::metrics::{ATTNSELF, LAYER_CURVES, METRICS_SKIPS, SEMREC};
use typolab::report::{CurveBundle, HeatmapBundle, NegCorrBundle, HEATMAP_BUNDLE, NEGCORR_BUNDLE, SEMREC_BY_SR_BUNDLE};
use typolab_core::perturb::{read_dataset, read_jsonl, SkipRecord};
use typolab_core::store::DumpManifest;
use typolab_core::tokenizer::VocabTokenizer;

const CORPUS: &str = "\
The committee reached an extraordinary agreement after long talks.
Her grandmother kept meticulous records of every journey abroad.
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_typolab"))
}

fn typolab(args: &[&str], config: &Path) -> Output {
    bin().args(args).arg("--config").arg(config).output().unwrap()
}

fn setup(dir: &Path, extra: &str) -> PathBuf {
    std::fs::write(dir.join("corpus.txt"), CORPUS).unwrap();
    let cfg = dir.join("exp.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"corpus": "corpus.txt", "seeds": [1, 2], "out": "out",
                "model": {{"refmodel": {{"n_layers": 2, "n_heads": 2, "d_model": 16, "d_ff": 32, "init_seed": 3}}}}{extra}}}"#
        ),
    )
    .unwrap();
    cfg
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_all(cfg: &Path) {
    for cmd in ["gen", "run-ref", "validate", "metrics", "report"] {
        ok(typolab(&[cmd], cfg));
    }
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "");

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"sr_levels": [2.0]}"#).unwrap();
    assert_eq!(typolab(&["gen"], &bad).status.code(), Some(2));
    assert_eq!(typolab(&["gen", "--top-k", "0"], &cfg).status.code(), Some(2));

    let short = dir.path().join("short.json");
    std::fs::write(dir.path().join("short.txt"), "tiny words only here\n").unwrap();
    std::fs::write(&short, r#"{"corpus": "short.txt", "out": "out_short"}"#).unwrap();
    let out = typolab(&["gen"], &short);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no target candidates"));

    // Metrics before any dumps exist is a data error.
    assert_eq!(typolab(&["metrics"], &cfg).status.code(), Some(3));
    let out = typolab(&["report"], &cfg);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing input files"));
}

#[test]
fn skip_threshold_exit() {
    let dir = tempfile::tempdir().unwrap();
    // A vocabulary without the context's non-ASCII letter: every full-context prompt fails.
    let tok = VocabTokenizer::new(["extraordinary".to_string()], ' '..='~', true);
    tok.save(&dir.path().join("vocab.json")).unwrap();
    std::fs::write(dir.path().join("c.txt"), "Straße extraordinary ending\n").unwrap();
    let cfg = dir.path().join("exp.json");
    std::fs::write(
        &cfg,
        r#"{"corpus": "c.txt", "tokenizer": {"vocab": "vocab.json"}, "ci_levels": [1.0], "seeds": [1]}"#,
    )
    .unwrap();
    ok(typolab(&["gen"], &cfg));
    let out = typolab(&["run-ref"], &cfg);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let skips: Vec<SkipRecord> = read_jsonl(&dir.path().join("out/dumps/run_skips.jsonl")).unwrap();
    assert!(skips.iter().all(|s| s.reason.starts_with("UnknownCharacter")));
    // Fully masked context avoids the unknown letter.
    ok(typolab(&["gen", "--ci", "0"], &cfg));
    ok(typolab(&["run-ref", "--ci", "0"], &cfg));
}

#[test]
fn outputs_cover_every_sample_and_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "");
    run_all(&cfg);
    let out = dir.path().join("out");

    let samples = read_dataset(&out.join("dataset/dataset.jsonl")).unwrap();
    let gen_skips: Vec<SkipRecord> = read_jsonl(&out.join("dataset/skips.jsonl")).unwrap();
    assert_eq!(samples.len() + gen_skips.len(), 2 * 25 * 2);

    // Each dataset sample has exactly L + 1 semrec rows, or a skip entry.
    let mut per_sample: BTreeMap<(String, String, String, String), usize> = BTreeMap::new();
    for r in rows(&out.join("metrics").join(SEMREC)) {
        *per_sample
            .entry((r[0].into(), r[1].into(), r[2].into(), r[3].into()))
            .or_default() += 1;
    }
    let run_skips: Vec<SkipRecord> = read_jsonl(&out.join("dumps/run_skips.jsonl")).unwrap();
    let metric_skips: Vec<SkipRecord> = read_jsonl(&out.join("metrics").join(METRICS_SKIPS)).unwrap();
    assert_eq!(per_sample.len() + run_skips.len() + metric_skips.len(), samples.len());
    assert!(per_sample.values().all(|&n| n == 3));
    let keys: HashSet<_> = samples
        .iter()
        .map(|s| {
            (
                s.sample_id.clone(),
                s.sr().to_string(),
                s.ci().to_string(),
                s.seed().to_string(),
            )
        })
        .collect();
    assert!(per_sample.keys().all(|k| keys.contains(k)));

    // SR = 0 rows are the identity.
    for r in rows(&out.join("metrics").join(SEMREC)) {
        if &r[1] == "0" {
            assert!((r[5].parse::<f64>().unwrap() - 1.0).abs() <= 1e-6);
        }
    }

    // layer_curves means recomputed from semrec.csv with a two-pass mean.
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows(&out.join("metrics").join(SEMREC)) {
        groups
            .entry((r[1].into(), r[2].into(), r[4].into()))
            .or_default()
            .push(r[5].parse().unwrap());
    }
    let curves = rows(&out.join("metrics").join(LAYER_CURVES));
    assert_eq!(curves.len(), groups.len());
    for r in curves {
        let vals = &groups[&(r[0].to_string(), r[1].to_string(), r[2].to_string())];
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((r[3].parse::<f64>().unwrap() - m).abs() <= 1e-8, "{r:?} vs {m}");
        assert!((r[4].parse::<f64>().unwrap() - var.sqrt()).abs() <= 1e-8, "{r:?}");
        assert_eq!(r[5].parse::<usize>().unwrap(), vals.len());
    }
    assert_eq!(rows(&out.join("metrics").join(ATTNSELF)).len(), per_sample.len() * 2);

    // Bundles agree with the tables they were built from.
    let negcorr: NegCorrBundle =
        serde_json::from_str(&std::fs::read_to_string(out.join("report").join(NEGCORR_BUNDLE)).unwrap()).unwrap();
    for s in &negcorr.series {
        let p = &s.points[0];
        assert_eq!((p.delta_sr, p.rate), (0.0, 0.0));
        assert!(s.points.iter().all(|p| (0.0..=1.0).contains(&p.rate)));
    }
    let semrec_sr: CurveBundle =
        serde_json::from_str(&std::fs::read_to_string(out.join("report").join(SEMREC_BY_SR_BUNDLE)).unwrap()).unwrap();
    for panel in &semrec_sr.panels {
        let base = panel.curves.iter().find(|c| c.level.is_zero()).unwrap();
        assert!(base.mean.iter().all(|v| (v - 1.0).abs() <= 1e-6));
    }
    let heatmaps: HeatmapBundle =
        serde_json::from_str(&std::fs::read_to_string(out.join("report").join(HEATMAP_BUNDLE)).unwrap()).unwrap();
    assert_eq!(heatmaps.panels.len(), 5);
    for panel in &heatmaps.panels {
        let csv = rows(&out.join("metrics").join(format!("heatmap_sr{}.csv", panel.sr)));
        assert_eq!(csv.len(), 4);
        for r in csv {
            let (l, h): (usize, usize) = (r[0].parse().unwrap(), r[1].parse().unwrap());
            assert_eq!(panel.values[l][h], r[2].parse::<f64>().unwrap());
        }
        assert_eq!(panel.top_heads.len(), 4);
    }
}

#[test]
fn unmodified_prompts_and_repeatable_gen() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "");
    ok(typolab(&["gen", "--sr", "0", "--ci", "1", "--seeds", "1"], &cfg));
    let path = dir.path().join("out/dataset/dataset.jsonl");
    let samples = read_dataset(&path).unwrap();
    assert_eq!(samples.len(), 2);
    for s in &samples {
        assert_eq!(s.processed_text, s.original_text);
    }
    let first = std::fs::read(&path).unwrap();
    ok(typolab(&["gen", "--sr", "0", "--ci", "1", "--seeds", "1"], &cfg));
    assert_eq!(std::fs::read(&path).unwrap(), first);
    // Stale cell files from a wider grid are removed.
    ok(typolab(&["gen"], &cfg));
    ok(typolab(&["gen", "--sr", "0", "--ci", "1", "--seeds", "1"], &cfg));
    let cells = std::fs::read_dir(dir.path().join("out/dataset"))
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("dataset_")
        })
        .count();
    assert_eq!(cells, 1);
}

#[test]
fn baselines_synthesized_when_sr_zero_absent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), r#", "sr_levels": [0.5, 1.0], "ci_levels": [1.0]"#);
    run_all(&cfg);
    let manifest = DumpManifest::load(&dir.path().join("out/dumps")).unwrap();
    let synth = manifest.records.iter().filter(|r| r.synthesized_baseline).count();
    assert_eq!(synth, 2 * 2);
    assert_eq!(manifest.records.len(), 2 * 2 * 2 + synth);
    let semrec = rows(&dir.path().join("out/metrics").join(SEMREC));
    assert_eq!(semrec.len(), 2 * 2 * 2 * 3);
    assert!(semrec.iter().all(|r| &r[1] != "0"));
}

#[test]
fn missing_baseline_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), r#", "ci_levels": [1.0]"#);
    ok(typolab(&["gen"], &cfg));
    ok(typolab(&["run-ref"], &cfg));
    let dumps = dir.path().join("out/dumps");
    let mut manifest = DumpManifest::load(&dumps).unwrap();
    manifest.records.retain(|r| !(r.sr.is_zero() && r.seed == 2));
    manifest.save(&dumps).unwrap();

    let out = typolab(&["metrics"], &cfg);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("baseline") && err.contains("seed=2"), "{err}");

    ok(typolab(&["metrics", "--allow-partial"], &cfg));
    let skips: Vec<SkipRecord> = read_jsonl(&dir.path().join("out/metrics").join(METRICS_SKIPS)).unwrap();
    assert_eq!(skips.len(), 2 * 4);
    assert!(skips.iter().all(|s| s.reason.starts_with("BaselineMissing")));
}

#[test]
fn validate_reports_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), r#", "sr_levels": [0.0, 1.0], "ci_levels": [1.0]"#);
    ok(typolab(&["gen"], &cfg));
    ok(typolab(&["run-ref"], &cfg));
    let out = ok(typolab(&["validate"], &cfg));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 error(s)"));

    let file = dir.path().join("out/dumps/rec000001.actd");
    let mut bytes = std::fs::read(&file).unwrap();
    let n = bytes.len();
    bytes[n - 1] ^= 1;
    std::fs::write(&file, bytes).unwrap();
    let out = typolab(&["validate"], &cfg);
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("FAIL rec000001.actd: ChecksumMismatch"), "{text}");
    assert!(text.contains("1 error(s)"));
    assert_eq!(typolab(&["metrics"], &cfg).status.code(), Some(3));

    // --dumps points validate at another directory.
    let empty = dir.path().join("nowhere");
    let out = bin().args(["validate", "--dumps"]).arg(&empty).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}
