// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment configuration and the output directory layout.
//!
//! Relative paths inside a config file resolve against the file's own
//! directory. Command-line overrides resolve against the working directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use typolab_core::corpus::{CorpusFormat, DEFAULT_MIN_LEN};
use typolab_core::metrics::NegCorrMode;
use typolab_core::refmodel::RefModelConfig;
use typolab_core::Level;

use crate::error::{HarnessError, Result};

/// Where prompts are tokenized from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerChoice {
    /// Vocabulary built from the corpus itself.
    #[default]
    Reference,
    /// A saved vocabulary file.
    Vocab(PathBuf),
}

/// Where activations come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSource {
    /// Run the built-in reference transformer.
    Refmodel(RefModelConfig),
    /// Read dumps produced elsewhere.
    Dumps(PathBuf),
}

impl Default for ModelSource {
    fn default() -> Self {
        Self::Refmodel(RefModelConfig::default())
    }
}

fn default_levels() -> Vec<Level> {
    [0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|&v| Level::new(v).expect("grid level in range"))
        .collect()
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_min_len() -> usize {
    DEFAULT_MIN_LEN
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_top_k() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub corpus_format: CorpusFormat,
    #[serde(default = "default_levels")]
    pub sr_levels: Vec<Level>,
    #[serde(default = "default_levels")]
    pub ci_levels: Vec<Level>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_min_len")]
    pub min_word_len: usize,
    #[serde(default)]
    pub tokenizer: TokenizerChoice,
    #[serde(default)]
    pub model: ModelSource,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Dump directory; defaults to the model's dump path or `out/dumps`.
    #[serde(default)]
    pub dumps: Option<PathBuf>,
    #[serde(default)]
    pub negcorr_mode: NegCorrMode,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub allow_partial: bool,
    /// CI level used for per-head heatmaps; defaults to the largest CI present.
    #[serde(default)]
    pub attention_ci: Option<Level>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Command-line values that replace config fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub sr_levels: Option<Vec<f64>>,
    pub ci_levels: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub dumps: Option<PathBuf>,
    pub negcorr_mode: Option<NegCorrMode>,
    pub top_k: Option<usize>,
    pub allow_partial: bool,
}

fn levels(values: &[f64]) -> Result<Vec<Level>> {
    values
        .iter()
        .map(|&v| Level::new(v).map_err(|e| HarnessError::Config(e.to_string())))
        .collect()
}

impl ExperimentConfig {
    /// Read a config file, resolving its relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(c) = self.corpus.as_mut() {
            fix(c);
        }
        if let TokenizerChoice::Vocab(p) = &mut self.tokenizer {
            fix(p);
        }
        if let ModelSource::Dumps(p) = &mut self.model {
            fix(p);
        }
        fix(&mut self.out);
        if let Some(d) = self.dumps.as_mut() {
            fix(d);
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = &o.sr_levels {
            self.sr_levels = levels(v)?;
        }
        if let Some(v) = &o.ci_levels {
            self.ci_levels = levels(v)?;
        }
        if let Some(v) = &o.seeds {
            self.seeds = v.clone();
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = &o.dumps {
            self.dumps = Some(v.clone());
        }
        if let Some(v) = o.negcorr_mode {
            self.negcorr_mode = v;
        }
        if let Some(v) = o.top_k {
            self.top_k = v;
        }
        self.allow_partial |= o.allow_partial;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_owned()));
        if self.sr_levels.is_empty() || self.ci_levels.is_empty() || self.seeds.is_empty() {
            return bad("sr_levels, ci_levels and seeds must be non-empty");
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        if self.min_word_len < 3 {
            return bad("min_word_len must be at least 3 so a word has an interior");
        }
        if let ModelSource::Refmodel(m) = &self.model {
            // The vocabulary size is checked against the tokenizer at run time.
            let mut probe = m.clone();
            probe.vocab_size = probe.vocab_size.max(1);
            probe.validate()?;
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out.join("dataset")
    }

    pub fn dumps_dir(&self) -> PathBuf {
        match (&self.dumps, &self.model) {
            (Some(d), _) => d.clone(),
            (None, ModelSource::Dumps(d)) => d.clone(),
            (None, ModelSource::Refmodel(_)) => self.out.join("dumps"),
        }
    }

    pub fn metrics_dir(&self) -> PathBuf {
        self.out.join("metrics")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_grid() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.sr_levels.len(), 5);
        assert_eq!(cfg.ci_levels, cfg.sr_levels);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.min_word_len, 10);
        assert_eq!(cfg.negcorr_mode, NegCorrMode::PerWord);
        assert_eq!(cfg.tokenizer, TokenizerChoice::Reference);
        assert!(matches!(cfg.model, ModelSource::Refmodel(_)));
        assert_eq!(cfg.dumps_dir(), PathBuf::from("out/dumps"));
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        std::fs::write(
            &path,
            r#"{"corpus": "c.txt", "tokenizer": {"vocab": "v.json"}, "model": {"dumps": "/abs/d"}, "out": "o"}"#,
        )
        .unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.corpus.clone().unwrap(), dir.path().join("c.txt"));
        assert_eq!(cfg.tokenizer, TokenizerChoice::Vocab(dir.path().join("v.json")));
        assert_eq!(cfg.dumps_dir(), PathBuf::from("/abs/d"));
        assert_eq!(cfg.metrics_dir(), dir.path().join("o/metrics"));
    }

    #[test]
    fn rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        std::fs::write(&path, r#"{"sr_levels": [0.0, 1.5]}"#).unwrap();
        assert!(matches!(ExperimentConfig::load(&path), Err(HarnessError::Config(_))));
        std::fs::write(&path, r#"{"unknown_field": 1}"#).unwrap();
        assert!(matches!(ExperimentConfig::load(&path), Err(HarnessError::Config(_))));

        let mut cfg = ExperimentConfig::default();
        let o = Overrides {
            ci_levels: Some(vec![-0.1]),
            ..Default::default()
        };
        assert!(cfg.apply(&o).is_err());
        cfg.top_k = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn overrides_replace_fields() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&Overrides {
            sr_levels: Some(vec![0.0, 1.0]),
            seeds: Some(vec![9]),
            dumps: Some("elsewhere".into()),
            negcorr_mode: Some(NegCorrMode::Pooled),
            top_k: Some(2),
            allow_partial: true,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(cfg.sr_levels, vec![Level::ZERO, Level::ONE]);
        assert_eq!(cfg.seeds, vec![9]);
        assert_eq!(cfg.dumps_dir(), PathBuf::from("elsewhere"));
        assert_eq!(cfg.negcorr_mode, NegCorrMode::Pooled);
        assert_eq!(cfg.top_k, 2);
        assert!(cfg.allow_partial);
    }
}
