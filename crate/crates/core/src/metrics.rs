// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer-wise metrics over activation dumps.
//!
//! All functions are pure. Sums that feed reported aggregates use
//! [`pairwise_sum`] so results do not depend on evaluation order.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::level::Level;
use crate::store::ActivationDump;

/// Tolerance used when matching SR differences on the level grid.
const GRID_TOL: f64 = 1e-9;

/// Sum in a fixed pairwise order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Mean and population standard deviation (two-pass).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let m = mean(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    (m, (pairwise_sum(&dev) / values.len() as f64).sqrt())
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(x: &[f32], y: &[f32]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Precondition(format!(
            "cosine of vectors with lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let (mut dot, mut xx, mut yy) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in x.iter().zip(y) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        xx += a * a;
        yy += b * b;
    }
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (xx.sqrt() * yy.sqrt())).clamp(-1.0, 1.0))
}

/// SemRecScore for one scrambled prompt against its original.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemRecCurve {
    pub sample_id: String,
    pub sr: Level,
    pub ci: Level,
    pub seed: u64,
    /// One value per layer, embeddings first.
    pub scores: Vec<f64>,
}

/// Per-layer cosine between the original word's single token and the last
/// token of the scrambled word's span.
pub fn sem_rec_score(orig: &ActivationDump, scrambled: &ActivationDump) -> Result<Vec<f64>> {
    let (os, ss) = (orig.shape(), scrambled.shape());
    if os.span_len != 1 {
        return Err(Error::InvalidOriginal { span_len: os.span_len });
    }
    if (os.n_layers, os.d_model) != (ss.n_layers, ss.d_model) {
        return Err(Error::Precondition(format!("dump geometries differ: {os:?} vs {ss:?}")));
    }
    (0..=os.n_layers)
        .map(|layer| cosine(orig.hidden_at(layer, 0), scrambled.hidden_at(layer, ss.span_len - 1)))
        .collect()
}

/// `KL(p || q)` in nats.
///
/// Both inputs must be distributions (sums within `1e-5` of one). Terms
/// with `p_k = 0` contribute nothing. Rounding can leave tiny negative
/// totals for nearly equal inputs; those are clamped to zero.
pub fn kl_divergence<T: Copy + Into<f64>>(p: &[T], q: &[T]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Precondition(format!(
            "KL divergence of distributions with lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    for (name, d) in [("p", p), ("q", q)] {
        let values: Vec<f64> = d.iter().map(|&v| v.into()).collect();
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Precondition(format!(
                "{name} has negative or non-finite entries"
            )));
        }
        let total = pairwise_sum(&values);
        if (total - 1.0).abs() > 1e-5 {
            return Err(Error::Precondition(format!("{name} sums to {total}, not 1")));
        }
    }
    let mut terms = Vec::with_capacity(p.len());
    for (k, (&pk, &qk)) in p.iter().zip(q).enumerate() {
        let (pk, qk): (f64, f64) = (pk.into(), qk.into());
        if pk == 0.0 {
            continue;
        }
        if qk == 0.0 {
            return Err(Error::InfiniteDivergence { index: k });
        }
        terms.push(pk * (pk / qk).ln());
    }
    Ok(pairwise_sum(&terms).max(0.0))
}

/// Groups the SR levels of one (sample, ci, seed) cell.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConsistencyKey {
    pub sample_id: String,
    pub ci: Level,
    pub seed: u64,
}

impl std::fmt::Display for ConsistencyKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}|ci={}|seed={}", self.sample_id, self.ci, self.seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrPoint {
    pub sr: Level,
    /// Final-layer SemRecScore.
    pub final_score: f64,
    /// KL of this level's next-token distribution against the SR = 0 one.
    pub kldiv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRecord {
    pub key: ConsistencyKey,
    pub points: Vec<SrPoint>,
}

/// One (i, j) pair with `sr_i - sr_j = delta_sr`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairStat {
    pub delta_sr: f64,
    pub i: Level,
    pub j: Level,
    /// `(score_i - score_j) * (kl_i - kl_j)`
    pub c_value: f64,
    pub negative: bool,
}

/// All pairs of a record whose SR levels differ by `delta_sr`, ordered by `(i, j)`.
pub fn consistency_pairs(record: &ConsistencyRecord, delta_sr: f64) -> Vec<PairStat> {
    let mut pairs = Vec::new();
    for a in &record.points {
        for b in &record.points {
            if ((a.sr.value() - b.sr.value()) - delta_sr).abs() <= GRID_TOL {
                let c_value = (a.final_score - b.final_score) * (a.kldiv - b.kldiv);
                pairs.push(PairStat {
                    delta_sr,
                    i: a.sr,
                    j: b.sr,
                    c_value,
                    negative: c_value < 0.0,
                });
            }
        }
    }
    pairs.sort_by_key(|p| (p.i, p.j));
    pairs
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegCorrMode {
    /// Rate per word, then the mean over words.
    #[default]
    PerWord,
    /// One rate over all pairs of all words.
    Pooled,
}

impl NegCorrMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PerWord => "per-word",
            Self::Pooled => "pooled",
        }
    }
}

impl std::str::FromStr for NegCorrMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-word" => Ok(Self::PerWord),
            "pooled" => Ok(Self::Pooled),
            other => Err(Error::Config(format!("unknown negcorr mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegCorrRate {
    pub rate: f64,
    pub n_pairs: usize,
    /// Records contributing at least one pair.
    pub n_words: usize,
}

/// Fraction of SR pairs at distance `delta_sr` where SemRecScore and KL
/// move in opposite directions. Pairs never cross record boundaries.
pub fn neg_corr_rate(records: &[ConsistencyRecord], delta_sr: f64, mode: NegCorrMode) -> Result<NegCorrRate> {
    let mut n_pairs = 0usize;
    let mut n_negative = 0usize;
    let mut word_rates = Vec::new();
    for record in records {
        let pairs = consistency_pairs(record, delta_sr);
        if pairs.is_empty() {
            continue;
        }
        let neg = pairs.iter().filter(|p| p.negative).count();
        n_pairs += pairs.len();
        n_negative += neg;
        word_rates.push(neg as f64 / pairs.len() as f64);
    }
    if n_pairs == 0 {
        return Err(Error::EmptyPairSet { delta_sr });
    }
    let rate = match mode {
        NegCorrMode::Pooled => n_negative as f64 / n_pairs as f64,
        NegCorrMode::PerWord => {
            word_rates.sort_by(f64::total_cmp);
            mean(&word_rates)
        }
    };
    Ok(NegCorrRate {
        rate,
        n_pairs,
        n_words: word_rates.len(),
    })
}

/// Every non-negative difference between two levels of `levels`, ascending.
pub fn realizable_deltas(levels: &[Level]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    let set: BTreeSet<Level> = levels.iter().copied().collect();
    for a in &set {
        for b in &set {
            let d = a.value() - b.value();
            if d >= 0.0 && !out.iter().any(|x| (x - d).abs() <= GRID_TOL) {
                out.push(d);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Attention from `t_last` to its own span, per layer and head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSelf {
    /// Sum over heads, one value per layer.
    pub aggregate: Vec<f64>,
    /// `per_head[layer][head]`
    pub per_head: Vec<Vec<f64>>,
}

pub fn attention_self(dump: &ActivationDump) -> AttentionSelf {
    let s = dump.shape();
    let per_head: Vec<Vec<f64>> = (0..s.n_layers)
        .map(|layer| {
            (0..s.n_heads)
                .map(|head| {
                    let row: Vec<f64> = dump.attn_row(layer, head).iter().map(|&v| f64::from(v)).collect();
                    pairwise_sum(&row)
                })
                .collect()
        })
        .collect();
    let aggregate = per_head.iter().map(|heads| pairwise_sum(heads)).collect();
    AttentionSelf { aggregate, per_head }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSelfRecord {
    pub sample_id: String,
    pub sr: Level,
    pub ci: Level,
    pub seed: u64,
    pub values: AttentionSelf,
}

/// Mean per-head AttentionSelf for one SR level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadHeatmap {
    pub sr: Level,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Row-major `[layer][head]`.
    pub values: Vec<f64>,
    pub samples: usize,
}

impl HeadHeatmap {
    pub fn get(&self, layer: usize, head: usize) -> f64 {
        self.values[layer * self.n_heads + head]
    }
}

pub fn head_heatmap(records: &[AttentionSelfRecord]) -> Result<HeadHeatmap> {
    let first = records.first().ok_or(Error::EmptyInput("no AttentionSelf records"))?;
    let n_layers = first.values.per_head.len();
    let n_heads = first.values.per_head.first().map_or(0, Vec::len);
    for r in records {
        if r.sr != first.sr {
            return Err(Error::Precondition(format!(
                "heatmap mixes SR levels {} and {}",
                first.sr, r.sr
            )));
        }
        if r.values.per_head.len() != n_layers || r.values.per_head.iter().any(|h| h.len() != n_heads) {
            return Err(Error::Precondition("heatmap records have different geometry".into()));
        }
    }
    let mut values = Vec::with_capacity(n_layers * n_heads);
    let mut column = Vec::with_capacity(records.len());
    for layer in 0..n_layers {
        for head in 0..n_heads {
            column.clear();
            column.extend(records.iter().map(|r| r.values.per_head[layer][head]));
            values.push(mean(&column));
        }
    }
    Ok(HeadHeatmap {
        sr: first.sr,
        n_layers,
        n_heads,
        values,
        samples: records.len(),
    })
}

/// A heatmap cell chosen as form-sensitive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadRank {
    pub layer: usize,
    pub head: usize,
    pub value: f64,
}

/// The `k` largest cells; ties go to the lower layer, then the lower head.
pub fn form_sensitive_heads(heatmap: &HeadHeatmap, k: usize) -> Vec<HeadRank> {
    let mut cells: Vec<HeadRank> = (0..heatmap.n_layers)
        .flat_map(|layer| {
            (0..heatmap.n_heads).map(move |head| HeadRank {
                layer,
                head,
                value: heatmap.get(layer, head),
            })
        })
        .collect();
    cells.sort_by(|a, b| {
        b.value
            .total_cmp(&a.value)
            .then(a.layer.cmp(&b.layer))
            .then(a.head.cmp(&b.head))
    });
    cells.truncate(k);
    cells
}

/// Jaccard overlap of two head sets.
pub fn head_set_stability(a: &BTreeSet<(usize, usize)>, b: &BTreeSet<(usize, usize)>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("head sets must be non-empty"));
    }
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    Ok(inter as f64 / union as f64)
}

/// Per-layer mean/std/count of a set of curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n: usize,
}

pub fn layer_stats(curves: &[&[f64]]) -> Result<LayerStats> {
    let first = curves.first().ok_or(Error::EmptyInput("no curves to aggregate"))?;
    let layers = first.len();
    if curves.iter().any(|c| c.len() != layers) {
        return Err(Error::Precondition("curves have different lengths".into()));
    }
    let mut mean = Vec::with_capacity(layers);
    let mut std = Vec::with_capacity(layers);
    let mut column = Vec::with_capacity(curves.len());
    for layer in 0..layers {
        column.clear();
        column.extend(curves.iter().map(|c| c[layer]));
        let (m, s) = mean_std(&column);
        mean.push(m);
        std.push(s);
    }
    Ok(LayerStats {
        mean,
        std,
        n: curves.len(),
    })
}

type ConsistencyGroups<'a> = BTreeMap<ConsistencyKey, Vec<(Level, f64, &'a [f32])>>;

/// Group SemRecScore curves and distributions into consistency records.
///
/// `entries` holds, per prompt, its key, SR level, final-layer score and
/// next-token distribution. Each key must contain an SR = 0 entry; keys
/// without one are returned in the error list.
pub fn consistency_records<'a>(
    entries: impl IntoIterator<Item = (ConsistencyKey, Level, f64, &'a [f32])>,
) -> (
    Vec<ConsistencyRecord>,
    Vec<ConsistencyKey>,
    Vec<(ConsistencyKey, Error)>,
) {
    let mut grouped: ConsistencyGroups<'a> = BTreeMap::new();
    for (key, sr, score, dist) in entries {
        grouped.entry(key).or_default().push((sr, score, dist));
    }
    let mut records = Vec::new();
    let mut missing = Vec::new();
    let mut failures = Vec::new();
    'keys: for (key, mut levels) in grouped {
        levels.sort_by_key(|(sr, _, _)| *sr);
        let Some(&(_, _, base)) = levels.iter().find(|(sr, _, _)| sr.is_zero()) else {
            missing.push(key);
            continue;
        };
        let mut points = Vec::with_capacity(levels.len());
        for (sr, final_score, dist) in levels {
            match kl_divergence(dist, base) {
                Ok(kldiv) => points.push(SrPoint { sr, final_score, kldiv }),
                Err(e) => {
                    failures.push((key, e));
                    continue 'keys;
                }
            }
        }
        records.push(ConsistencyRecord { key, points });
    }
    (records, missing, failures)
}
