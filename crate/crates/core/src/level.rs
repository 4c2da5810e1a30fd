// SPDX-License-Identifier: MIT OR Apache-2.0

//! Ratios in `[0, 1]` used for scramble ratio and context integrity levels.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// A ratio in `[0, 1]` (a scramble ratio or a context-integrity level).
///
/// Levels compare and hash by value so they can key maps; `-0.0` is
/// normalized to `0.0` on construction.
#[derive(Clone, Copy, Debug, Serialize)]
#[serde(transparent)]
pub struct Level(f64);

impl Level {
    pub const ZERO: Level = Level(0.0);
    pub const ONE: Level = Level(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Config(format!("level {value} is outside [0, 1]")));
        }
        Ok(Level(value + 0.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        Level::new(value).map_err(serde::de::Error::custom)
    }
}

impl PartialEq for Level {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for Level {}

impl Hash for Level {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

impl PartialOrd for Level {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Level {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl TryFrom<f64> for Level {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Level::new(value)
    }
}

/// `round-half-up(ratio * count)`.
///
/// The small bias absorbs representation error in products such as
/// `0.35 * 10` that are meant to land exactly on a half.
pub fn round_half_up(ratio: f64, count: usize) -> usize {
    (ratio * count as f64 + 0.5 + 1e-9).floor() as usize
}
