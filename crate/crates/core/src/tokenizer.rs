// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tokenization with character offsets.
//!
//! The reference tokenizer does greedy longest-match against a word
//! vocabulary and falls back to single characters. Each vocabulary word is
//! also present in a space-prefixed form (` word`), mirroring the leading-space
//! tokens of byte-level BPE vocabularies, so an in-vocabulary word inside a
//! prompt is exactly one token while a scrambled word splits into characters.
//!
//! Offsets are counted in `char`s, not bytes.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{word_core, Passage};
use crate::error::{Error, Result};

/// One token of an encoded prompt. `char_start..char_end` is half-open.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

impl Token {
    /// Offset of the first non-whitespace character, so a space-prefixed
    /// word token starts where the word itself starts.
    pub fn content_start(&self) -> usize {
        let leading = self.text.chars().take_while(|c| c.is_whitespace()).count();
        self.char_start + leading
    }

    fn is_whitespace(&self) -> bool {
        self.text.chars().all(char::is_whitespace)
    }
}

/// Half-open range of token indices covering one word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SpanRepr", into = "SpanRepr")]
pub struct TokenSpan {
    start: usize,
    end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::Precondition(format!("token span {start}..{end} is empty")));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    /// Index of the final token of the span, the query position for metrics.
    pub fn t_last(&self) -> usize {
        self.end - 1
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Serialize, Deserialize)]
struct SpanRepr {
    start: usize,
    end: usize,
    t_last: usize,
}

impl TryFrom<SpanRepr> for TokenSpan {
    type Error = String;

    fn try_from(repr: SpanRepr) -> std::result::Result<Self, String> {
        let span = TokenSpan::new(repr.start, repr.end).map_err(|e| e.to_string())?;
        if repr.t_last != span.t_last() {
            return Err(format!(
                "t_last {} inconsistent with span {}..{}",
                repr.t_last, repr.start, repr.end
            ));
        }
        Ok(span)
    }
}

impl From<TokenSpan> for SpanRepr {
    fn from(span: TokenSpan) -> Self {
        SpanRepr {
            start: span.start,
            end: span.end,
            t_last: span.t_last(),
        }
    }
}

/// Anything that can turn a prompt into offset-tracked tokens.
pub trait Tokenizer: Send + Sync {
    fn encode(&self, prompt: &str) -> Result<Vec<Token>>;

    fn vocab_size(&self) -> usize;
}

/// True iff `word` encodes to one token both on its own and after a single space.
pub fn is_single_token(word: &str, tokenizer: &dyn Tokenizer) -> bool {
    if word.is_empty() {
        return false;
    }
    let single = |text: &str| matches!(tokenizer.encode(text), Ok(tokens) if tokens.len() == 1);
    single(word) && single(&format!(" {word}"))
}

/// Find the minimal token span whose content covers `char_range` exactly.
///
/// Leading whitespace absorbed into a token (` word`) does not count as
/// part of its content.
pub fn locate_subword_span(tokens: &[Token], char_range: Range<usize>) -> Result<TokenSpan> {
    let mismatch = || Error::SpanMismatch {
        start: char_range.start,
        end: char_range.end,
    };
    if char_range.is_empty() {
        return Err(Error::Precondition(format!(
            "empty character range {}..{}",
            char_range.start, char_range.end
        )));
    }
    let start = tokens
        .iter()
        .position(|t| t.char_end > char_range.start && !t.is_whitespace())
        .ok_or_else(mismatch)?;
    if tokens[start].content_start() != char_range.start {
        return Err(mismatch());
    }
    let last = tokens[start..]
        .iter()
        .position(|t| t.char_end >= char_range.end)
        .map(|offset| start + offset)
        .ok_or_else(mismatch)?;
    if tokens[last].char_end != char_range.end {
        return Err(mismatch());
    }
    TokenSpan::new(start, last + 1)
}

/// Normalization applied to vocabulary entries and to lookups.
pub const NORMALIZATION: &str = "ascii-lowercase";

/// On-disk vocabulary: metadata header plus a sorted word list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabFile {
    pub format: String,
    pub version: u32,
    /// Total number of token ids the tokenizer assigns.
    pub size: usize,
    pub normalization: String,
    /// Whether each word is also registered with a single leading space.
    pub space_prefixed_words: bool,
    /// Characters available as single-character fallback tokens.
    pub fallback_alphabet: String,
    pub words: Vec<String>,
}

pub const VOCAB_FORMAT: &str = "typolab-vocab";

/// Longest-match word tokenizer with single-character fallback.
#[derive(Clone, Debug)]
pub struct VocabTokenizer {
    ids: HashMap<String, u32>,
    max_entry_chars: usize,
    words: Vec<String>,
    fallback: Vec<char>,
    space_prefixed: bool,
}

impl VocabTokenizer {
    /// Build a tokenizer from explicit entries.
    ///
    /// Ids are assigned in a fixed order: fallback characters, then words,
    /// then (if enabled) space-prefixed words; duplicates keep their first id.
    pub fn new(
        words: impl IntoIterator<Item = String>,
        fallback: impl IntoIterator<Item = char>,
        space_prefixed: bool,
    ) -> Self {
        let words: Vec<String> = words
            .into_iter()
            .map(|w| w.to_ascii_lowercase())
            .filter(|w| !w.is_empty())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let fallback: Vec<char> = fallback.into_iter().collect::<BTreeSet<_>>().into_iter().collect();

        let mut ids = HashMap::new();
        let mut max_entry_chars = 1;
        let mut add = |entry: String| {
            max_entry_chars = max_entry_chars.max(entry.chars().count());
            let next = ids.len() as u32;
            ids.entry(entry).or_insert(next);
        };
        for &c in &fallback {
            add(c.to_string());
        }
        for w in &words {
            add(w.clone());
        }
        if space_prefixed {
            for w in &words {
                add(format!(" {w}"));
            }
        }
        Self {
            ids,
            max_entry_chars,
            words,
            fallback,
            space_prefixed,
        }
    }

    /// The reference tokenizer for a corpus: every whitespace-delimited word
    /// (lowercased, outer punctuation stripped) plus a fallback alphabet of
    /// printable ASCII and every other non-whitespace character in the corpus.
    pub fn from_corpus(passages: &[Passage]) -> Self {
        let mut words = BTreeSet::new();
        let mut alphabet: BTreeSet<char> = (' '..='~').collect();
        for passage in passages {
            for word in &passage.words {
                alphabet.extend(word.chars().filter(|c| !c.is_whitespace()));
                let (lo, hi) = word_core(word);
                let core: String = word.chars().skip(lo).take(hi - lo).collect();
                if !core.is_empty() {
                    words.insert(core.to_ascii_lowercase());
                }
            }
        }
        Self::new(words, alphabet, true)
    }

    pub fn from_vocab_file(file: VocabFile) -> Result<Self> {
        if file.format != VOCAB_FORMAT {
            return Err(Error::Config(format!("unknown vocabulary format `{}`", file.format)));
        }
        if file.normalization != NORMALIZATION {
            return Err(Error::Config(format!(
                "unsupported vocabulary normalization `{}`",
                file.normalization
            )));
        }
        let tokenizer = Self::new(file.words, file.fallback_alphabet.chars(), file.space_prefixed_words);
        if tokenizer.vocab_size() != file.size {
            return Err(Error::Config(format!(
                "vocabulary declares {} entries but yields {}",
                file.size,
                tokenizer.vocab_size()
            )));
        }
        Ok(tokenizer)
    }

    pub fn to_vocab_file(&self) -> VocabFile {
        VocabFile {
            format: VOCAB_FORMAT.to_owned(),
            version: 1,
            size: self.vocab_size(),
            normalization: NORMALIZATION.to_owned(),
            space_prefixed_words: self.space_prefixed,
            fallback_alphabet: self.fallback.iter().collect(),
            words: self.words.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: VocabFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::from_vocab_file(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.to_vocab_file()).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id_of(&self, entry: &str) -> Option<u32> {
        self.ids.get(entry).copied()
    }
}

impl Tokenizer for VocabTokenizer {
    fn encode(&self, prompt: &str) -> Result<Vec<Token>> {
        if prompt.is_empty() {
            return Err(Error::Precondition("cannot encode an empty prompt".into()));
        }
        let chars: Vec<char> = prompt.chars().collect();
        let mut tokens = Vec::new();
        let mut pos = 0;
        let mut key = String::new();
        while pos < chars.len() {
            let longest = self.max_entry_chars.min(chars.len() - pos);
            let mut matched = None;
            for len in (1..=longest).rev() {
                let piece = &chars[pos..pos + len];
                if len == 1 {
                    if let Some(&id) = self.ids.get(piece[0].encode_utf8(&mut [0; 4]) as &str) {
                        matched = Some((id, 1));
                        break;
                    }
                }
                key.clear();
                key.extend(piece.iter().map(char::to_ascii_lowercase));
                if let Some(&id) = self.ids.get(&key) {
                    matched = Some((id, len));
                    break;
                }
            }
            let (id, len) = matched.ok_or(Error::UnknownCharacter {
                ch: chars[pos],
                offset: pos,
            })?;
            tokens.push(Token {
                id,
                text: chars[pos..pos + len].iter().collect(),
                char_start: pos,
                char_end: pos + len,
            });
            pos += len;
        }
        Ok(tokens)
    }

    fn vocab_size(&self) -> usize {
        self.ids.len()
    }
}
