// SPDX-License-Identifier: MIT OR Apache-2.0

//! Corpus ingestion and target-word selection.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tokenizer::{is_single_token, Tokenizer};

/// Default minimum target-word length in characters.
pub const DEFAULT_MIN_LEN: usize = 10;

/// One corpus passage split on whitespace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub words: Vec<String>,
}

impl Passage {
    pub fn new(id: impl Into<String>, text: &str) -> Self {
        Self {
            id: id.into(),
            words: text.split_whitespace().map(str::to_owned).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// `.json` files are read as SQuAD, anything else as plain text.
    #[default]
    Auto,
    Squad,
    Text,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Passage>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let squad = match format {
        CorpusFormat::Squad => true,
        CorpusFormat::Text => false,
        CorpusFormat::Auto => path.extension().is_some_and(|ext| ext == "json"),
    };
    if squad {
        parse_squad(&text)
    } else {
        Ok(parse_plain_text(&text))
    }
}

/// One passage per non-blank line; ids are `line-<n>` with 1-based line numbers.
pub fn parse_plain_text(text: &str) -> Vec<Passage> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| Passage::new(format!("line-{:06}", i + 1), line))
        .collect()
}

/// Parse SQuAD-shaped JSON.
///
/// Accepts either a flat array of `{"id", "context"}` entries or the
/// official v1.1 layout (`data[].paragraphs[].context`), where a paragraph
/// takes the id of its first question, falling back to `<title>-<index>`.
pub fn parse_squad(text: &str) -> Result<Vec<Passage>> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::CorpusParse {
        sample_id: "<root>".into(),
        reason: e.to_string(),
    })?;
    match &root {
        Value::Array(entries) => entries
            .iter()
            .enumerate()
            .map(|(i, entry)| flat_entry(i, entry))
            .collect(),
        Value::Object(map) => {
            let data = map
                .get("data")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::CorpusParse {
                    sample_id: "<root>".into(),
                    reason: "expected an array or an object with a `data` array".into(),
                })?;
            let mut passages = Vec::new();
            for (a, article) in data.iter().enumerate() {
                let title = article
                    .get("title")
                    .and_then(Value::as_str)
                    .map(str::to_owned)
                    .unwrap_or_else(|| format!("article{a}"));
                let paragraphs =
                    article
                        .get("paragraphs")
                        .and_then(Value::as_array)
                        .ok_or_else(|| Error::CorpusParse {
                            sample_id: title.clone(),
                            reason: "missing `paragraphs` array".into(),
                        })?;
                for (p, paragraph) in paragraphs.iter().enumerate() {
                    let id = paragraph
                        .pointer("/qas/0/id")
                        .and_then(Value::as_str)
                        .map(str::to_owned)
                        .unwrap_or_else(|| format!("{title}-{p}"));
                    passages.push(context_passage(id, paragraph)?);
                }
            }
            Ok(passages)
        }
        _ => Err(Error::CorpusParse {
            sample_id: "<root>".into(),
            reason: "expected an array or an object".into(),
        }),
    }
}

fn flat_entry(index: usize, entry: &Value) -> Result<Passage> {
    let id = match entry.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => {
            return Err(Error::CorpusParse {
                sample_id: format!("#{index}"),
                reason: "missing string `id`".into(),
            })
        }
    };
    context_passage(id, entry)
}

fn context_passage(id: String, entry: &Value) -> Result<Passage> {
    let Some(context) = entry.get("context").and_then(Value::as_str) else {
        return Err(Error::CorpusParse {
            sample_id: id,
            reason: "missing string `context`".into(),
        });
    };
    let passage = Passage::new(id, context);
    if passage.words.is_empty() {
        return Err(Error::CorpusParse {
            sample_id: passage.id,
            reason: "empty context".into(),
        });
    }
    Ok(passage)
}

/// Char range `lo..hi` of `word` with leading/trailing non-alphanumerics trimmed.
pub fn word_core(word: &str) -> (usize, usize) {
    let chars: Vec<char> = word.chars().collect();
    let lo = chars.iter().position(|c| c.is_alphanumeric()).unwrap_or(chars.len());
    let hi = chars.iter().rposition(|c| c.is_alphanumeric()).map_or(lo, |i| i + 1);
    (lo, hi)
}

pub(crate) fn core_str(word: &str) -> String {
    let (lo, hi) = word_core(word);
    word.chars().skip(lo).take(hi - lo).collect()
}

/// A passage together with its chosen target word.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetCandidate {
    pub sample_id: String,
    pub text: Vec<String>,
    pub target_index: usize,
    /// The target with surrounding punctuation removed.
    pub target_word: String,
}

/// Whether a word (after punctuation stripping) qualifies as a target.
pub fn is_eligible(core: &str, tokenizer: &dyn Tokenizer, min_len: usize) -> bool {
    core.chars().count() >= min_len && core.chars().all(|c| c.is_ascii_alphabetic()) && is_single_token(core, tokenizer)
}

/// First eligible word of every passage, in corpus order.
pub fn select_targets(corpus: &[Passage], tokenizer: &dyn Tokenizer, min_len: usize) -> Vec<TargetCandidate> {
    corpus
        .iter()
        .filter_map(|passage| {
            passage.words.iter().enumerate().find_map(|(i, word)| {
                let core = core_str(word);
                is_eligible(&core, tokenizer, min_len).then(|| TargetCandidate {
                    sample_id: passage.id.clone(),
                    text: passage.words.clone(),
                    target_index: i,
                    target_word: core,
                })
            })
        })
        .collect()
}
