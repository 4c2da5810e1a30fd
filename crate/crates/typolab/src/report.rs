// SPDX-License-Identifier: MIT OR Apache-2.0

//! `report`: metric tables to plot-ready JSON bundles.
//!
//! Bundles carry data only; nothing here renders a figure.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use typolab_core::Level;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{MetricsMeta, ATTNSELF_CURVES, FORM_HEADS, LAYER_CURVES, METRICS_META, NEGCORR};
use crate::table::{read_csv, read_json, write_json};

pub const NEGCORR_BUNDLE: &str = "negcorr_vs_delta.json";
pub const SEMREC_BY_SR_BUNDLE: &str = "semrec_by_sr.json";
pub const SEMREC_BY_CI_BUNDLE: &str = "semrec_by_ci.json";
pub const ATTNSELF_BUNDLE: &str = "attnself_by_sr.json";
pub const HEATMAP_BUNDLE: &str = "head_heatmaps.json";

#[derive(Clone, Debug, Deserialize)]
pub struct NegCorrRow {
    pub delta_sr: f64,
    pub mode: String,
    pub rate: f64,
    pub n_pairs: usize,
}

#[derive(Clone, Debug, Deserialize)]
pub struct CurveRow {
    pub sr: Level,
    pub ci: Level,
    pub layer: usize,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Deserialize)]
pub struct HeatmapRow {
    pub layer: usize,
    pub head: usize,
    pub mean: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Deserialize)]
pub struct FormHeadRow {
    pub sr: Level,
    pub rank: usize,
    pub layer: usize,
    pub head: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub model_name: String,
    pub n_layers: usize,
    pub n_heads: usize,
    pub samples_scored: usize,
    pub synthesized_baselines: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegCorrPoint {
    pub delta_sr: f64,
    pub rate: f64,
    pub n_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegCorrSeries {
    pub mode: String,
    pub points: Vec<NegCorrPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegCorrBundle {
    pub figure: String,
    pub x_label: String,
    pub y_label: String,
    pub primary_mode: String,
    pub series: Vec<NegCorrSeries>,
    pub metadata: Metadata,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    /// Value of the condition that varies within a panel.
    pub level: Level,
    pub n: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePanel {
    /// Value of the condition held fixed in this panel.
    pub fixed: Level,
    pub curves: Vec<Curve>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveBundle {
    pub figure: String,
    pub x_label: String,
    pub y_label: String,
    /// `"ci"` or `"sr"`: the condition each panel fixes.
    pub panel_condition: String,
    /// The condition that varies between curves of a panel.
    pub curve_condition: String,
    pub panels: Vec<CurvePanel>,
    pub metadata: Metadata,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadCell {
    pub layer: usize,
    pub head: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapPanel {
    pub sr: Level,
    pub n: usize,
    /// `values[layer][head]`
    pub values: Vec<Vec<f64>>,
    /// Form-sensitive heads, best first.
    pub top_heads: Vec<HeadCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapBundle {
    pub figure: String,
    pub x_label: String,
    pub y_label: String,
    pub ci: Option<Level>,
    pub top_k: usize,
    pub panels: Vec<HeatmapPanel>,
    pub metadata: Metadata,
}

fn curves(rows: &[CurveRow], by_ci: bool) -> Vec<CurvePanel> {
    // panel level -> curve level -> rows in layer order
    let mut grouped: BTreeMap<Level, BTreeMap<Level, Vec<&CurveRow>>> = BTreeMap::new();
    for r in rows {
        let (panel, curve) = if by_ci { (r.ci, r.sr) } else { (r.sr, r.ci) };
        grouped.entry(panel).or_default().entry(curve).or_default().push(r);
    }
    grouped
        .into_iter()
        .map(|(fixed, curves)| CurvePanel {
            fixed,
            curves: curves
                .into_iter()
                .map(|(level, mut rs)| {
                    rs.sort_by_key(|r| r.layer);
                    Curve {
                        level,
                        n: rs[0].n,
                        mean: rs.iter().map(|r| r.mean).collect(),
                        std: rs.iter().map(|r| r.std).collect(),
                    }
                })
                .collect(),
        })
        .collect()
}

fn curve_bundle(figure: &str, y_label: &str, rows: &[CurveRow], by_ci: bool, metadata: &Metadata) -> CurveBundle {
    let (panel, curve) = if by_ci { ("ci", "sr") } else { ("sr", "ci") };
    CurveBundle {
        figure: figure.into(),
        x_label: "layer".into(),
        y_label: y_label.into(),
        panel_condition: panel.into(),
        curve_condition: curve.into(),
        panels: curves(rows, by_ci),
        metadata: metadata.clone(),
    }
}

fn heatmap_panel(sr: Level, rows: &[HeatmapRow], top: Vec<HeadCell>) -> HeatmapPanel {
    let n_layers = rows.iter().map(|r| r.layer + 1).max().unwrap_or(0);
    let n_heads = rows.iter().map(|r| r.head + 1).max().unwrap_or(0);
    let mut values = vec![vec![0.0; n_heads]; n_layers];
    for r in rows {
        values[r.layer][r.head] = r.mean;
    }
    HeatmapPanel {
        sr,
        n: rows.first().map_or(0, |r| r.n),
        values,
        top_heads: top,
    }
}

/// Names of the files a report needs that are not present in `dir`.
fn missing_inputs(dir: &Path) -> Result<Vec<String>> {
    let mut missing: Vec<String> = [METRICS_META, NEGCORR, LAYER_CURVES, ATTNSELF_CURVES, FORM_HEADS]
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| dir.join(f).display().to_string())
        .collect();
    if missing.is_empty() {
        let meta: MetricsMeta = read_json(&dir.join(METRICS_META))?;
        missing.extend(
            meta.heatmap_files
                .iter()
                .filter(|f| !dir.join(f).is_file())
                .map(|f| dir.join(f).display().to_string()),
        );
    }
    Ok(missing)
}

pub fn run(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let dir = cfg.metrics_dir();
    let missing = missing_inputs(&dir)?;
    if !missing.is_empty() {
        return Err(HarnessError::MissingInputs(missing));
    }
    let meta: MetricsMeta = read_json(&dir.join(METRICS_META))?;
    let metadata = Metadata {
        model_name: meta.model_name.clone(),
        n_layers: meta.n_layers,
        n_heads: meta.n_heads,
        samples_scored: meta.samples_scored,
        synthesized_baselines: meta.synthesized_baselines,
        skipped: meta.skipped,
    };

    let neg: Vec<NegCorrRow> = read_csv(&dir.join(NEGCORR))?;
    let mut series: BTreeMap<String, Vec<NegCorrPoint>> = BTreeMap::new();
    for r in neg {
        series.entry(r.mode).or_default().push(NegCorrPoint {
            delta_sr: r.delta_sr,
            rate: r.rate,
            n_pairs: r.n_pairs,
        });
    }
    let negcorr = NegCorrBundle {
        figure: "negcorr_vs_delta_sr".into(),
        x_label: "ΔSR".into(),
        y_label: "NegCorrRate".into(),
        primary_mode: meta.negcorr_mode.as_str().into(),
        series: series
            .into_iter()
            .map(|(mode, points)| NegCorrSeries { mode, points })
            .collect(),
        metadata: metadata.clone(),
    };

    let semrec: Vec<CurveRow> = read_csv(&dir.join(LAYER_CURVES))?;
    let attn: Vec<CurveRow> = read_csv(&dir.join(ATTNSELF_CURVES))?;
    let semrec_sr = curve_bundle("semrec_by_sr", "SemRecScore", &semrec, true, &metadata);
    let semrec_ci = curve_bundle("semrec_by_ci", "SemRecScore", &semrec, false, &metadata);
    let attnself = curve_bundle("attnself_by_sr", "AttentionSelf", &attn, true, &metadata);

    let heads: Vec<FormHeadRow> = read_csv(&dir.join(FORM_HEADS))?;
    let mut panels = Vec::new();
    for file in &meta.heatmap_files {
        let rows: Vec<HeatmapRow> = read_csv(&dir.join(file))?;
        let sr: Level = file
            .strip_prefix("heatmap_sr")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse::<f64>().ok())
            .and_then(|v| Level::new(v).ok())
            .ok_or_else(|| HarnessError::Data(format!("cannot read an SR level from {file}")))?;
        let mut top: Vec<&FormHeadRow> = heads.iter().filter(|h| h.sr == sr).collect();
        top.sort_by_key(|h| h.rank);
        let top = top
            .into_iter()
            .map(|h| HeadCell {
                layer: h.layer,
                head: h.head,
                value: h.value,
            })
            .collect();
        panels.push(heatmap_panel(sr, &rows, top));
    }
    let heatmaps = HeatmapBundle {
        figure: "attention_head_heatmaps".into(),
        x_label: "head".into(),
        y_label: "layer".into(),
        ci: meta.attention_ci,
        top_k: meta.top_k,
        panels,
        metadata,
    };

    let out = cfg.report_dir();
    std::fs::create_dir_all(&out).map_err(|e| HarnessError::Data(format!("{}: {e}", out.display())))?;
    write_json(&out.join(NEGCORR_BUNDLE), &negcorr)?;
    write_json(&out.join(SEMREC_BY_SR_BUNDLE), &semrec_sr)?;
    write_json(&out.join(SEMREC_BY_CI_BUNDLE), &semrec_ci)?;
    write_json(&out.join(ATTNSELF_BUNDLE), &attnself)?;
    write_json(&out.join(HEATMAP_BUNDLE), &heatmaps)?;
    Ok([
        NEGCORR_BUNDLE,
        SEMREC_BY_SR_BUNDLE,
        SEMREC_BY_CI_BUNDLE,
        ATTNSELF_BUNDLE,
        HEATMAP_BUNDLE,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect())
}
