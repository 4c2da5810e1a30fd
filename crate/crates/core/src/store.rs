// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary activation dumps and their JSON manifest.
//!
//! File layout, all little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `ACTD`                            |
//! | 4      | 4    | format version (`u32`)                  |
//! | 8      | 40   | `n_layers, n_heads, d_model, span_len, vocab_size` (`u64` each) |
//! | 48     | ...  | `hidden` f32 `[n_layers + 1][span_len][d_model]` |
//! |        |      | `attn_rows` f32 `[n_layers][n_heads][span_len]`  |
//! |        |      | `next_token_dist` f32 `[vocab_size]`             |
//!
//! The manifest (`manifest.json`) records each file's byte length and its
//! 64-bit FNV-1a checksum over the whole file, as 16 lowercase hex digits.

use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::level::Level;
use crate::tokenizer::TokenSpan;

pub const MAGIC: &[u8; 4] = b"ACTD";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 48;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Tolerance on probability sums and attention bounds.
pub const PROB_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpShape {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub span_len: usize,
    pub vocab_size: usize,
}

impl DumpShape {
    pub fn hidden_len(&self) -> usize {
        (self.n_layers + 1) * self.span_len * self.d_model
    }

    pub fn attn_len(&self) -> usize {
        self.n_layers * self.n_heads * self.span_len
    }

    /// Total file size in bytes.
    pub fn file_len(&self) -> usize {
        HEADER_LEN + 4 * (self.hidden_len() + self.attn_len() + self.vocab_size)
    }
}

/// Span-restricted activations of one prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationDump {
    shape: DumpShape,
    hidden: Vec<f32>,
    attn_rows: Vec<f32>,
    next_token_dist: Vec<f32>,
}

impl ActivationDump {
    /// Assemble a dump, checking buffer lengths against `shape` (not the
    /// value invariants; see [`validate`](Self::validate)).
    pub fn new(shape: DumpShape, hidden: Vec<f32>, attn_rows: Vec<f32>, next_token_dist: Vec<f32>) -> Result<Self> {
        if shape.n_layers == 0
            || shape.n_heads == 0
            || shape.d_model == 0
            || shape.span_len == 0
            || shape.vocab_size == 0
        {
            return Err(Error::Validation {
                field: "shape".into(),
                detail: format!("all dimensions must be positive, got {shape:?}"),
            });
        }
        for (field, got, want) in [
            ("hidden", hidden.len(), shape.hidden_len()),
            ("attn_rows", attn_rows.len(), shape.attn_len()),
            ("next_token_dist", next_token_dist.len(), shape.vocab_size),
        ] {
            if got != want {
                return Err(Error::Validation {
                    field: field.into(),
                    detail: format!("length {got}, shape requires {want}"),
                });
            }
        }
        Ok(Self {
            shape,
            hidden,
            attn_rows,
            next_token_dist,
        })
    }

    pub fn shape(&self) -> DumpShape {
        self.shape
    }

    pub fn hidden(&self) -> &[f32] {
        &self.hidden
    }

    pub fn attn_rows(&self) -> &[f32] {
        &self.attn_rows
    }

    pub fn next_token_dist(&self) -> &[f32] {
        &self.next_token_dist
    }

    /// Hidden vector at `layer` (0 = embeddings) and span position `pos`.
    pub fn hidden_at(&self, layer: usize, pos: usize) -> &[f32] {
        let d = self.shape.d_model;
        let start = (layer * self.shape.span_len + pos) * d;
        &self.hidden[start..start + d]
    }

    /// Attention from `t_last` to each span token for one layer and head.
    pub fn attn_row(&self, layer: usize, head: usize) -> &[f32] {
        let s = self.shape.span_len;
        let start = (layer * self.shape.n_heads + head) * s;
        &self.attn_rows[start..start + s]
    }

    /// Check finiteness, attention bounds and distribution normalization.
    pub fn validate(&self) -> Result<()> {
        self.validate_in("<memory>")
    }

    fn validate_in(&self, file: &str) -> Result<()> {
        let hidden_off = HEADER_LEN;
        let attn_off = hidden_off + 4 * self.hidden.len();
        let dist_off = attn_off + 4 * self.attn_rows.len();
        for (field, values, base) in [
            ("hidden", &self.hidden, hidden_off),
            ("attn_rows", &self.attn_rows, attn_off),
            ("next_token_dist", &self.next_token_dist, dist_off),
        ] {
            if let Some(index) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    file: file.to_owned(),
                    field,
                    index,
                    offset: (base + 4 * index) as u64,
                });
            }
        }
        for layer in 0..self.shape.n_layers {
            for head in 0..self.shape.n_heads {
                let row = self.attn_row(layer, head);
                if let Some(v) = row.iter().find(|&&v| !(0.0..=1.0 + PROB_TOL as f32).contains(&v)) {
                    return Err(Error::Validation {
                        field: "attn_rows".into(),
                        detail: format!("{file}: layer {layer} head {head} has weight {v} outside [0, 1]"),
                    });
                }
                let sum: f64 = row.iter().map(|&v| f64::from(v)).sum();
                if sum > 1.0 + PROB_TOL {
                    return Err(Error::Validation {
                        field: "attn_rows".into(),
                        detail: format!("{file}: layer {layer} head {head} slice sums to {sum} > 1"),
                    });
                }
            }
        }
        if let Some(index) = self.next_token_dist.iter().position(|&v| v < 0.0) {
            return Err(Error::Validation {
                field: "next_token_dist".into(),
                detail: format!("{file}: negative probability at index {index}"),
            });
        }
        let total: f64 = self.next_token_dist.iter().map(|&v| f64::from(v)).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::Validation {
                field: "next_token_dist".into(),
                detail: format!("{file}: distribution sums to {total}"),
            });
        }
        Ok(())
    }

    /// Serialize without validating values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = self.shape;
        let mut out = Vec::with_capacity(s.file_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for dim in [s.n_layers, s.n_heads, s.d_model, s.span_len, s.vocab_size] {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in self.hidden.iter().chain(&self.attn_rows).chain(&self.next_token_dist) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parse the binary layout, checking magic, version and exact length.
    /// Value invariants are not checked here.
    pub fn from_bytes(bytes: &[u8], file: &str) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::ShapeMismatch {
                file: file.to_owned(),
                offset: bytes.len() as u64,
                detail: format!("file is {} bytes, header needs {HEADER_LEN}", bytes.len()),
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadHeader {
                file: file.to_owned(),
                detail: format!("magic {:?}, expected `ACTD`", &bytes[..4]),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::BadHeader {
                file: file.to_owned(),
                detail: format!("unsupported format version {version}"),
            });
        }
        let mut dims = [0usize; 5];
        for (i, dim) in dims.iter_mut().enumerate() {
            let at = 8 + 8 * i;
            let raw = u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
            *dim = usize::try_from(raw)
                .ok()
                .filter(|&d| d < 1 << 40)
                .ok_or_else(|| Error::BadHeader {
                    file: file.to_owned(),
                    detail: format!("dimension {raw} at byte {at} is implausible"),
                })?;
        }
        let shape = DumpShape {
            n_layers: dims[0],
            n_heads: dims[1],
            d_model: dims[2],
            span_len: dims[3],
            vocab_size: dims[4],
        };
        if bytes.len() != shape.file_len() {
            return Err(Error::ShapeMismatch {
                file: file.to_owned(),
                offset: bytes.len().min(shape.file_len()) as u64,
                detail: format!("file is {} bytes, header implies {}", bytes.len(), shape.file_len()),
            });
        }
        let mut floats = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let hidden = floats.by_ref().take(shape.hidden_len()).collect();
        let attn_rows = floats.by_ref().take(shape.attn_len()).collect();
        let next_token_dist = floats.collect();
        Self::new(shape, hidden, attn_rows, next_token_dist).map_err(|e| Error::ShapeMismatch {
            file: file.to_owned(),
            offset: HEADER_LEN as u64,
            detail: e.to_string(),
        })
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hasher = FnvHasher::default();
    hasher.write(bytes);
    hasher.finish()
}

pub fn checksum_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

/// Manifest entry for one dump file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpRecordMeta {
    pub sample_id: String,
    pub sr: Level,
    pub ci: Level,
    pub seed: u64,
    pub prompt_token_count: usize,
    pub target_span: TokenSpan,
    pub file: String,
    pub byte_length: u64,
    pub checksum: String,
    /// An SR = 0 prompt added only to serve as a baseline; it is not a
    /// dataset sample.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthesized_baseline: bool,
}

impl DumpRecordMeta {
    /// A pending entry; length and checksum are filled in by [`write_dump`].
    pub fn pending(
        sample_id: impl Into<String>,
        sr: Level,
        ci: Level,
        seed: u64,
        prompt_token_count: usize,
        target_span: TokenSpan,
        file: impl Into<String>,
    ) -> Self {
        Self {
            sample_id: sample_id.into(),
            sr,
            ci,
            seed,
            prompt_token_count,
            target_span,
            file: file.into(),
            byte_length: 0,
            checksum: String::new(),
            synthesized_baseline: false,
        }
    }
}

/// Write one dump file. Returns the entry with byte length and checksum set.
pub fn write_dump(meta: &DumpRecordMeta, dump: &ActivationDump, dir: &Path) -> Result<DumpRecordMeta> {
    dump.validate()?;
    if dump.shape().span_len != meta.target_span.len() {
        return Err(Error::Validation {
            field: "target_span".into(),
            detail: format!(
                "span has {} tokens but the dump holds {}",
                meta.target_span.len(),
                dump.shape().span_len
            ),
        });
    }
    if meta.target_span.end() > meta.prompt_token_count {
        return Err(Error::Validation {
            field: "target_span".into(),
            detail: format!(
                "span ends at {} beyond {} prompt tokens",
                meta.target_span.end(),
                meta.prompt_token_count
            ),
        });
    }
    if meta.file.is_empty() || meta.file.contains(['/', '\\']) {
        return Err(Error::Validation {
            field: "file".into(),
            detail: format!("`{}` is not a plain file name", meta.file),
        });
    }
    let bytes = dump.to_bytes();
    let path = dir.join(&meta.file);
    std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    Ok(DumpRecordMeta {
        byte_length: bytes.len() as u64,
        checksum: checksum_hex(&bytes),
        ..meta.clone()
    })
}

/// Read and fully verify one dump file against its manifest entry.
pub fn read_dump(meta: &DumpRecordMeta, dir: &Path) -> Result<ActivationDump> {
    let path = dir.join(&meta.file);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let dump = ActivationDump::from_bytes(&bytes, &meta.file)?;
    if bytes.len() as u64 != meta.byte_length {
        return Err(Error::ShapeMismatch {
            file: meta.file.clone(),
            offset: bytes.len() as u64,
            detail: format!("file is {} bytes, manifest declares {}", bytes.len(), meta.byte_length),
        });
    }
    let actual = checksum_hex(&bytes);
    if actual != meta.checksum {
        return Err(Error::ChecksumMismatch {
            file: meta.file.clone(),
            expected: meta.checksum.clone(),
            actual,
        });
    }
    if dump.shape().span_len != meta.target_span.len() {
        return Err(Error::ShapeMismatch {
            file: meta.file.clone(),
            offset: 32,
            detail: format!(
                "header span_len {} but manifest span has {} tokens",
                dump.shape().span_len,
                meta.target_span.len()
            ),
        });
    }
    dump.validate_in(&meta.file)?;
    Ok(dump)
}

/// Dataset-level description of a dump directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpManifest {
    pub model_name: String,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    /// Free-form description of how prompts were wrapped, if at all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<String>,
    pub records: Vec<DumpRecordMeta>,
}

/// Outcome of checking every record of a manifest.
#[derive(Debug, Default)]
pub struct ValidationReport {
    pub checked: usize,
    pub errors: Vec<(String, Error)>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

impl DumpManifest {
    pub fn new(
        model_name: impl Into<String>,
        n_layers: usize,
        n_heads: usize,
        d_model: usize,
        vocab_size: usize,
    ) -> Self {
        Self {
            model_name: model_name.into(),
            n_layers,
            n_heads,
            d_model,
            vocab_size,
            prompt_template: None,
            records: Vec::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
    }

    /// Write `manifest.json` via a temporary file and rename.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        text.push('\n');
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    fn check_geometry(&self, meta: &DumpRecordMeta, dump: &ActivationDump) -> Result<()> {
        let s = dump.shape();
        let expected = (self.n_layers, self.n_heads, self.d_model, self.vocab_size);
        let got = (s.n_layers, s.n_heads, s.d_model, s.vocab_size);
        if expected != got {
            return Err(Error::ShapeMismatch {
                file: meta.file.clone(),
                offset: 8,
                detail: format!("header (layers, heads, d_model, vocab) = {got:?}, manifest declares {expected:?}"),
            });
        }
        Ok(())
    }

    /// Read a record and check it against the manifest geometry.
    pub fn read_record(&self, meta: &DumpRecordMeta, dir: &Path) -> Result<ActivationDump> {
        if meta.target_span.end() > meta.prompt_token_count {
            return Err(Error::Validation {
                field: "target_span".into(),
                detail: format!(
                    "{}: span ends at {} beyond {} prompt tokens",
                    meta.file,
                    meta.target_span.end(),
                    meta.prompt_token_count
                ),
            });
        }
        let dump = read_dump(meta, dir)?;
        self.check_geometry(meta, &dump)?;
        Ok(dump)
    }

    /// Check every record: existence, length, checksum, geometry and values.
    pub fn validate(&self, dir: &Path) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut seen = std::collections::HashSet::new();
        for meta in &self.records {
            report.checked += 1;
            if !seen.insert(&meta.file) {
                report.errors.push((
                    meta.file.clone(),
                    Error::Validation {
                        field: "file".into(),
                        detail: "file referenced by more than one record".into(),
                    },
                ));
                continue;
            }
            if let Err(e) = self.read_record(meta, dir) {
                report.errors.push((meta.file.clone(), e));
            }
        }
        report
    }
}

/// Accumulates dump files in a directory and commits the manifest once.
pub struct DumpWriter {
    dir: PathBuf,
    manifest: DumpManifest,
}

impl DumpWriter {
    pub fn create(dir: &Path, manifest: DumpManifest) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_owned(),
            manifest,
        })
    }

    pub fn add(&mut self, meta: &DumpRecordMeta, dump: &ActivationDump) -> Result<&DumpRecordMeta> {
        self.manifest.check_geometry(meta, dump)?;
        let written = write_dump(meta, dump, &self.dir)?;
        self.manifest.records.push(written);
        Ok(self.manifest.records.last().expect("just pushed"))
    }

    pub fn commit(self) -> Result<DumpManifest> {
        self.manifest.save(&self.dir)?;
        Ok(self.manifest)
    }
}
