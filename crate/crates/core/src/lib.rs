// SPDX-License-Identifier: MIT OR Apache-2.0

//! Building blocks for typoglycemia interpretability experiments.
//!
//! - [`corpus`] and [`perturb`] turn a text corpus into a seeded SR × CI
//!   matrix of prompts whose target word has a scrambled interior.
//! - [`tokenizer`] tracks character offsets so the scrambled word's subword
//!   span can be located in a prompt.
//! - [`store`] defines the binary activation-dump format shared by every
//!   model runner.
//! - [`metrics`] computes layer-wise SemRecScore, KL divergence,
//!   NegCorrRate, AttentionSelf and per-head heatmaps over dumps.
//! - [`refmodel`] is a small seeded decoder-only transformer that emits
//!   dumps, so the whole pipeline runs without an external model.

pub mod corpus;
pub mod error;
pub mod level;
pub mod metrics;
pub mod perturb;
pub mod refmodel;
pub mod store;
pub mod tokenizer;

pub use error::{Error, Result};
pub use level::Level;
