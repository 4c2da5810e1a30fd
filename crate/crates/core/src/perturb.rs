// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded word scrambling, context masking and the SR × CI sample matrix.
//!
//! Scrambling draws from a ChaCha8 stream seeded with the sample seed
//! (stream 0): first the window start, uniform over every valid offset in
//! the interior, then Fisher–Yates shuffles of a fresh copy of the window
//! until one differs from the original. Masking uses stream 1 of the same
//! seed, so a mask never depends on the scramble ratio.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{word_core, TargetCandidate};
use crate::error::{Error, Result};
use crate::level::{round_half_up, Level};

/// Token substituted for masked context words.
pub const MASK_TOKEN: &str = "_";

/// Shuffles tried before a window is declared degenerate.
pub const MAX_SHUFFLE_ATTEMPTS: usize = 64;

const SCRAMBLE_STREAM: u64 = 0;
const MASK_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrambleSpec {
    pub sr: Level,
    /// Interior characters, `len(word) - 2`.
    pub n_candidate: usize,
    pub n_scrambled: usize,
    /// Offset of the shuffled window within the interior.
    pub substring_start: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub ci: Level,
    pub n_total_context: usize,
    pub n_preserved: usize,
    pub masked_indices: Vec<usize>,
    pub seed: u64,
}

/// One (target, SR, CI, seed) cell of the experimental matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedSample {
    pub sample_id: String,
    pub target_index: usize,
    pub target_word: String,
    pub scrambled_word: String,
    pub scramble_spec: ScrambleSpec,
    pub mask_spec: MaskSpec,
    pub original_text: Vec<String>,
    pub processed_text: Vec<String>,
}

impl PerturbedSample {
    pub fn sr(&self) -> Level {
        self.scramble_spec.sr
    }

    pub fn ci(&self) -> Level {
        self.mask_spec.ci
    }

    pub fn seed(&self) -> u64 {
        self.scramble_spec.seed
    }

    /// The processed text joined with single spaces.
    pub fn prompt(&self) -> String {
        self.processed_text.join(" ")
    }

    /// Char range of the (possibly scrambled) target inside [`prompt`](Self::prompt),
    /// excluding any punctuation attached to it.
    pub fn target_char_range(&self) -> std::ops::Range<usize> {
        let before: usize = self.processed_text[..self.target_index]
            .iter()
            .map(|w| w.chars().count() + 1)
            .sum();
        let (lo, hi) = word_core(&self.processed_text[self.target_index]);
        before + lo..before + hi
    }

    /// The same cell with the original word restored (the SR = 0 prompt).
    pub fn baseline(&self) -> PerturbedSample {
        let mut base = self.clone();
        base.processed_text[self.target_index] = self.original_text[self.target_index].clone();
        base.scrambled_word = self.target_word.clone();
        base.scramble_spec = ScrambleSpec {
            sr: Level::ZERO,
            n_candidate: self.scramble_spec.n_candidate,
            n_scrambled: 0,
            substring_start: 0,
            seed: self.scramble_spec.seed,
        };
        base
    }
}

/// Scramble a contiguous window of the word's interior.
pub fn scramble_word(word: &str, sr: Level, seed: u64) -> Result<(String, ScrambleSpec)> {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() < 4 {
        return Err(Error::Precondition(format!("`{word}` is shorter than 4 characters")));
    }
    let n_candidate = chars.len() - 2;
    let mut n_scrambled = round_half_up(sr.value(), n_candidate);
    if !sr.is_zero() {
        n_scrambled = n_scrambled.max(1);
    }
    let mut spec = ScrambleSpec {
        sr,
        n_candidate,
        n_scrambled,
        substring_start: 0,
        seed,
    };
    if n_scrambled == 0 {
        return Ok((word.to_owned(), spec));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SCRAMBLE_STREAM);
    let max_start = n_candidate - n_scrambled;
    if max_start > 0 {
        spec.substring_start = rng.gen_range(0..=max_start);
    }
    let lo = 1 + spec.substring_start;
    let window = &chars[lo..lo + n_scrambled];
    if window.iter().collect::<BTreeSet<_>>().len() < 2 {
        return Err(Error::DegenerateWord {
            word: word.to_owned(),
            reason: format!(
                "window {:?} has fewer than 2 distinct characters",
                window.iter().collect::<String>()
            ),
        });
    }
    for _ in 0..MAX_SHUFFLE_ATTEMPTS {
        let mut shuffled = window.to_vec();
        shuffled.shuffle(&mut rng);
        if shuffled != window {
            let mut out = chars.clone();
            out[lo..lo + n_scrambled].copy_from_slice(&shuffled);
            return Ok((out.into_iter().collect(), spec));
        }
    }
    Err(Error::DegenerateWord {
        word: word.to_owned(),
        reason: format!("no differing shuffle within {MAX_SHUFFLE_ATTEMPTS} attempts"),
    })
}

/// Check that `scrambled` is a valid scramble of `original` with a window
/// of `n_scrambled` interior characters: anchors kept, same characters,
/// every changed position inside one window of that length, and a real
/// change whenever the window is non-empty.
pub fn check_scramble(original: &str, scrambled: &str, n_scrambled: usize) -> std::result::Result<(), String> {
    let a: Vec<char> = original.chars().collect();
    let b: Vec<char> = scrambled.chars().collect();
    if a.len() != b.len() {
        return Err(format!("length {} differs from {}", b.len(), a.len()));
    }
    if a.len() < 2 {
        return Err("word shorter than 2 characters".into());
    }
    if a[0] != b[0] || a[a.len() - 1] != b[b.len() - 1] {
        return Err("first or last character changed".into());
    }
    let mut sa = a.clone();
    let mut sb = b.clone();
    sa.sort_unstable();
    sb.sort_unstable();
    if sa != sb {
        return Err("character multiset changed".into());
    }
    let diffs: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
    match (diffs.first(), diffs.last()) {
        (None, _) if n_scrambled > 0 => Err("scrambled word equals the original".into()),
        (Some(_), _) if n_scrambled == 0 => Err("word changed with an empty window".into()),
        (Some(&first), Some(&last)) if last - first + 1 > n_scrambled => Err(format!(
            "changes span {} characters, window is {n_scrambled}",
            last - first + 1
        )),
        _ => Ok(()),
    }
}

/// Replace a uniformly chosen subset of context words with [`MASK_TOKEN`].
pub fn mask_context(text: &[String], target_index: usize, ci: Level, seed: u64) -> Result<(Vec<String>, MaskSpec)> {
    if target_index >= text.len() {
        return Err(Error::Precondition(format!(
            "target index {target_index} out of range for {} words",
            text.len()
        )));
    }
    let n_total_context = text.len() - 1;
    if n_total_context == 0 && ci != Level::ONE {
        return Err(Error::NoContext);
    }
    let n_preserved = round_half_up(ci.value(), n_total_context);
    let n_masked = n_total_context - n_preserved;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MASK_STREAM);
    let context: Vec<usize> = (0..text.len()).filter(|&i| i != target_index).collect();
    let mut masked_indices: Vec<usize> = rand::seq::index::sample(&mut rng, n_total_context, n_masked)
        .into_iter()
        .map(|k| context[k])
        .collect();
    masked_indices.sort_unstable();

    let mut masked = text.to_vec();
    for &i in &masked_indices {
        masked[i] = MASK_TOKEN.to_owned();
    }
    Ok((
        masked,
        MaskSpec {
            ci,
            n_total_context,
            n_preserved,
            masked_indices,
            seed,
        },
    ))
}

/// One skipped cell or sample, as written to skip logs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatrixOutput {
    pub samples: Vec<PerturbedSample>,
    pub skips: Vec<SkipRecord>,
}

/// Every (seed, sr, ci) cell for one candidate, in that nesting order.
///
/// The scramble for a given (sr, seed) is computed once and reused for all
/// ci levels. Cells that fail are logged in `skips`.
pub fn build_matrix(
    candidate: &TargetCandidate,
    sr_levels: &[Level],
    ci_levels: &[Level],
    seeds: &[u64],
) -> Result<MatrixOutput> {
    if sr_levels.is_empty() || ci_levels.is_empty() || seeds.is_empty() {
        return Err(Error::Config("SR, CI and seed lists must be non-empty".into()));
    }
    let original = &candidate.text[candidate.target_index];
    let (lo, hi) = word_core(original);
    let prefix: String = original.chars().take(lo).collect();
    let suffix: String = original.chars().skip(hi).collect();

    let mut out = MatrixOutput::default();
    for &seed in seeds {
        for &sr in sr_levels {
            let scrambled = scramble_word(&candidate.target_word, sr, seed);
            for &ci in ci_levels {
                let (scrambled_word, scramble_spec) = match &scrambled {
                    Ok(s) => s.clone(),
                    Err(e) => {
                        out.skips.push(cell_skip(candidate, sr, ci, seed, e));
                        continue;
                    }
                };
                let (mut processed_text, mask_spec) =
                    match mask_context(&candidate.text, candidate.target_index, ci, seed) {
                        Ok(m) => m,
                        Err(e) => {
                            out.skips.push(cell_skip(candidate, sr, ci, seed, &e));
                            continue;
                        }
                    };
                processed_text[candidate.target_index] = format!("{prefix}{scrambled_word}{suffix}");
                out.samples.push(PerturbedSample {
                    sample_id: candidate.sample_id.clone(),
                    target_index: candidate.target_index,
                    target_word: candidate.target_word.clone(),
                    scrambled_word,
                    scramble_spec,
                    mask_spec,
                    original_text: candidate.text.clone(),
                    processed_text,
                });
            }
        }
    }
    Ok(out)
}

fn cell_skip(candidate: &TargetCandidate, sr: Level, ci: Level, seed: u64, err: &Error) -> SkipRecord {
    SkipRecord {
        sample_id: candidate.sample_id.clone(),
        reason: format!("{} (sr={sr} ci={ci} seed={seed}): {err}", err.kind()),
    }
}

/// `dataset_sr{sr}_ci{ci}_seed{seed}.jsonl`
pub fn cell_file_name(sr: Level, ci: Level, seed: u64) -> String {
    format!("dataset_sr{sr}_ci{ci}_seed{seed}.jsonl")
}

pub const COMBINED_DATASET: &str = "dataset.jsonl";

/// Write the combined dataset plus one file per (sr, ci, seed) cell.
/// Returns the file names written, combined file first.
pub fn write_dataset(dir: &Path, samples: &[PerturbedSample]) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut cells: std::collections::BTreeMap<(Level, Level, u64), Vec<&PerturbedSample>> = Default::default();
    for s in samples {
        cells.entry((s.sr(), s.ci(), s.seed())).or_default().push(s);
    }
    let mut names = vec![COMBINED_DATASET.to_owned()];
    write_jsonl(&dir.join(COMBINED_DATASET), samples.iter())?;
    for ((sr, ci, seed), cell) in cells {
        let name = cell_file_name(sr, ci, seed);
        write_jsonl(&dir.join(&name), cell.into_iter())?;
        names.push(name);
    }
    Ok(names)
}

pub fn read_dataset(path: &Path) -> Result<Vec<PerturbedSample>> {
    read_jsonl(path)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, rows: impl Iterator<Item = &'a T>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(|e| Error::json(path, e))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;

    fn lv(v: f64) -> Level {
        Level::new(v).unwrap()
    }

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    /// Straight-line re-implementation of the scramble procedure.
    fn scramble_oracle(word: &str, n_scrambled: usize, seed: u64) -> String {
        let chars: Vec<char> = word.chars().collect();
        let n_candidate = chars.len() - 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let max_start = n_candidate - n_scrambled;
        let start = if max_start > 0 { rng.gen_range(0..=max_start) } else { 0 };
        let original: Vec<char> = chars[1 + start..1 + start + n_scrambled].to_vec();
        for _ in 0..64 {
            let mut w = original.clone();
            let mut i = w.len();
            while i > 1 {
                i -= 1;
                let j = rng.gen_range(0..(i as u32 + 1)) as usize;
                w.swap(i, j);
            }
            if w != original {
                let mut out = chars.clone();
                out[1 + start..1 + start + n_scrambled].copy_from_slice(&w);
                return out.into_iter().collect();
            }
        }
        panic!("oracle found no differing shuffle");
    }

    #[test]
    fn abcdef_full_scramble_matches_oracle() {
        let expected = scramble_oracle("abcdef", 4, 42);
        // Frozen from the oracle.
        assert_eq!(expected, "abdcef");
        let (scrambled, spec) = scramble_word("abcdef", Level::ONE, 42).unwrap();
        assert_eq!(scrambled, expected);
        assert_eq!(spec.n_candidate, 4);
        assert_eq!(spec.n_scrambled, 4);
        assert_eq!(spec.substring_start, 0);
    }

    #[test]
    fn scramble_agrees_with_oracle_across_seeds() {
        for seed in 0..200 {
            for (sr, n) in [(0.25, 3), (0.5, 5), (0.75, 8), (1.0, 10)] {
                let (got, spec) = scramble_word("relationship", lv(sr), seed).unwrap();
                assert_eq!(spec.n_scrambled, n);
                assert_eq!(got, scramble_oracle("relationship", n, seed), "seed {seed} sr {sr}");
            }
        }
    }

    #[test]
    fn relationship_half_scramble_uses_five_char_window() {
        for seed in 0..500 {
            let (s, spec) = scramble_word("relationship", lv(0.5), seed).unwrap();
            assert_eq!(spec.n_scrambled, 5);
            assert!(spec.substring_start <= 5);
            check_scramble("relationship", &s, 5).unwrap();
            let lo = 1 + spec.substring_start;
            let a: Vec<char> = "relationship".chars().collect();
            let b: Vec<char> = s.chars().collect();
            for i in (0..12).filter(|i| !(lo..lo + 5).contains(i)) {
                assert_eq!(a[i], b[i]);
            }
        }
        check_scramble("relationship", "relatinioshp", 5).unwrap();
    }

    #[test]
    fn zero_ratio_is_identity() {
        let (s, spec) = scramble_word("relationship", Level::ZERO, 9).unwrap();
        assert_eq!(s, "relationship");
        assert_eq!(spec.n_scrambled, 0);
    }

    #[test]
    fn degenerate_and_short_words() {
        assert!(matches!(
            scramble_word("baaaab", Level::ONE, 1),
            Err(Error::DegenerateWord { .. })
        ));
        assert!(matches!(
            scramble_word("abc", Level::ONE, 1),
            Err(Error::Precondition(_))
        ));
        // A tiny positive ratio still scrambles one character, which can never differ.
        assert!(matches!(
            scramble_word("abcdefghijkl", lv(0.01), 1),
            Err(Error::DegenerateWord { .. })
        ));
    }

    #[test]
    fn validator_rejects_bad_scrambles() {
        assert!(check_scramble("relationship", "relationship", 5).is_err());
        assert!(check_scramble("relationship", "eelationshir", 5).is_err());
        assert!(check_scramble("relationship", "relationshis", 5).is_err());
        assert!(check_scramble("relationship", "rlationsheip", 5).is_err());
        assert!(check_scramble("relationship", "relationship", 0).is_ok());
    }

    #[test]
    fn mask_counts_and_identity() {
        let text = words("During Franco's regime the relationship flourished unexpectedly");
        let (m, spec) = mask_context(&text, 4, Level::ONE, 3).unwrap();
        assert_eq!(m, text);
        assert!(spec.masked_indices.is_empty());

        let (m, spec) = mask_context(&text, 4, Level::ZERO, 3).unwrap();
        assert_eq!(spec.masked_indices, [0, 1, 2, 3, 5, 6]);
        assert_eq!(m[4], "relationship");
        assert!(m.iter().enumerate().all(|(i, w)| i == 4 || w == "_"));

        let (m, spec) = mask_context(&text, 4, lv(0.5), 3).unwrap();
        assert_eq!(spec.n_total_context, 6);
        assert_eq!(spec.n_preserved, 3);
        assert_eq!(spec.masked_indices.len(), 3);
        assert_eq!(m.len(), text.len());
        assert!(!spec.masked_indices.contains(&4));
    }

    #[test]
    fn half_mask_on_long_passage() {
        let text = words(
            "During Franco's regime, however, the blaugrana team was granted profit due to its \
             good relationship with the dictator at management level, even giving two awards to him",
        );
        let target = text.iter().position(|w| w == "relationship").unwrap();
        let (scrambled, _) = scramble_word("relationship", lv(0.5), 11).unwrap();
        let (mut m, spec) = mask_context(&text, target, lv(0.5), 11).unwrap();
        m[target] = scrambled.clone();
        assert_eq!(spec.n_total_context, text.len() - 1);
        assert_eq!(spec.n_preserved, 13);
        assert_eq!(m.iter().filter(|w| *w == "_").count(), text.len() - 1 - 13);
        assert_eq!(m.len(), text.len());
        assert_eq!(m[target], scrambled);
    }

    #[test]
    fn single_word_has_no_context() {
        let text = words("relationship");
        assert!(matches!(mask_context(&text, 0, lv(0.5), 1), Err(Error::NoContext)));
        assert!(mask_context(&text, 0, Level::ONE, 1).is_ok());
        assert!(mask_context(&text, 3, Level::ONE, 1).is_err());
    }

    fn candidate() -> TargetCandidate {
        let p = Passage::new("s1", "During Franco's regime the relationship, flourished unexpectedly");
        TargetCandidate {
            sample_id: p.id.clone(),
            text: p.words,
            target_index: 4,
            target_word: "relationship".into(),
        }
    }

    #[test]
    fn matrix_shares_scramble_across_ci() {
        let levels: Vec<Level> = [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&v| lv(v)).collect();
        let out = build_matrix(&candidate(), &levels, &levels, &[7]).unwrap();
        assert_eq!(out.samples.len(), 25);
        assert!(out.skips.is_empty());
        for sr in &levels {
            let words: BTreeSet<_> = out
                .samples
                .iter()
                .filter(|s| s.sr() == *sr)
                .map(|s| s.scrambled_word.clone())
                .collect();
            assert_eq!(words.len(), 1);
        }
        // Punctuation travels with the scrambled word.
        let s = out
            .samples
            .iter()
            .find(|s| s.sr() == Level::ONE && s.ci() == Level::ONE)
            .unwrap();
        assert_eq!(s.processed_text[4], format!("{},", s.scrambled_word));
        let range = s.target_char_range();
        let prompt: Vec<char> = s.prompt().chars().collect();
        assert_eq!(prompt[range].iter().collect::<String>(), s.scrambled_word);
    }

    #[test]
    fn matrix_identity_cell() {
        let out = build_matrix(&candidate(), &[Level::ZERO], &[Level::ONE], &[1]).unwrap();
        assert_eq!(out.samples.len(), 1);
        assert_eq!(out.samples[0].processed_text, out.samples[0].original_text);
    }

    #[test]
    fn matrix_keys_are_distinct() {
        let levels: Vec<Level> = [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&v| lv(v)).collect();
        let out = build_matrix(&candidate(), &levels, &levels, &[1, 2, 3]).unwrap();
        let keys: BTreeSet<_> = out.samples.iter().map(|s| (s.sr(), s.ci(), s.seed())).collect();
        assert_eq!(out.samples.len(), 75);
        assert_eq!(keys.len(), 75);
    }

    #[test]
    fn matrix_logs_degenerate_cells() {
        let p = Passage::new("d", "xx baaaaaaaab yy");
        let cand = TargetCandidate {
            sample_id: "d".into(),
            text: p.words,
            target_index: 1,
            target_word: "baaaaaaaab".into(),
        };
        let out = build_matrix(&cand, &[Level::ZERO, Level::ONE], &[Level::ONE, Level::ZERO], &[1]).unwrap();
        assert_eq!(out.samples.len(), 2);
        assert_eq!(out.skips.len(), 2);
        assert!(out.skips[0].reason.starts_with("DegenerateWord"));
    }

    #[test]
    fn baseline_restores_original_word() {
        let out = build_matrix(&candidate(), &[lv(0.5)], &[lv(0.5)], &[4]).unwrap();
        let s = &out.samples[0];
        let b = s.baseline();
        assert_eq!(b.processed_text[4], "relationship,");
        assert_eq!(b.sr(), Level::ZERO);
        assert_eq!(b.mask_spec, s.mask_spec);
    }

    #[test]
    fn dataset_files() {
        let dir = tempfile::tempdir().unwrap();
        let levels = [Level::ZERO, Level::ONE];
        let out = build_matrix(&candidate(), &levels, &levels, &[5]).unwrap();
        let names = write_dataset(dir.path(), &out.samples).unwrap();
        assert_eq!(names[0], "dataset.jsonl");
        assert!(names.contains(&"dataset_sr1_ci0_seed5.jsonl".to_string()));
        assert_eq!(names.len(), 5);
        let back = read_dataset(&dir.path().join("dataset.jsonl")).unwrap();
        assert_eq!(back, out.samples);
    }

    proptest::proptest! {
        #[test]
        fn scramble_invariants(
            word in "[a-z]{4,18}",
            sr in 0.0f64..=1.0,
            seed in proptest::prelude::any::<u64>(),
        ) {
            let level = lv(sr);
            match scramble_word(&word, level, seed) {
                Ok((s, spec)) => {
                    proptest::prop_assert_eq!(spec.n_candidate, word.len() - 2);
                    check_scramble(&word, &s, spec.n_scrambled).map_err(proptest::test_runner::TestCaseError::fail)?;
                    let bound = 1.0 / (2.0 * spec.n_candidate as f64) + 1e-9;
                    proptest::prop_assert!((spec.n_scrambled as f64 / spec.n_candidate as f64 - sr).abs() <= bound);
                    proptest::prop_assert!(spec.substring_start + spec.n_scrambled <= spec.n_candidate);
                    let again = scramble_word(&word, level, seed).unwrap();
                    proptest::prop_assert_eq!(again.0, s);
                }
                Err(Error::DegenerateWord { .. }) => {}
                Err(e) => proptest::prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn scramble_count_is_monotone(n in 2usize..40, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            proptest::prop_assert!(round_half_up(lo, n) <= round_half_up(hi, n));
        }

        #[test]
        fn mask_invariants(
            n in 1usize..60,
            target in 0usize..60,
            ci in 0.0f64..=1.0,
            seed in proptest::prelude::any::<u64>(),
        ) {
            let target = target % n;
            let text: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
            match mask_context(&text, target, lv(ci), seed) {
                Ok((m, spec)) => {
                    let expected = (n - 1) - round_half_up(ci, n - 1);
                    proptest::prop_assert_eq!(spec.masked_indices.len(), expected);
                    proptest::prop_assert!(!spec.masked_indices.contains(&target));
                    for (i, w) in m.iter().enumerate() {
                        if spec.masked_indices.binary_search(&i).is_ok() {
                            proptest::prop_assert_eq!(w, "_");
                        } else {
                            proptest::prop_assert_eq!(w, &text[i]);
                        }
                    }
                }
                Err(Error::NoContext) => proptest::prop_assert_eq!(n, 1),
                Err(e) => proptest::prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
