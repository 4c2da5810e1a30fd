// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic CSV and JSON output.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{HarnessError, Result};

/// Significant digits in every CSV number.
pub const SIG_DIGITS: usize = 9;

/// Fixed-point rendering with [`SIG_DIGITS`] significant digits.
///
/// Magnitudes outside `[1e-5, 1e9)` fall back to scientific notation.
/// Zero (of either sign) renders as `0`.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    // The exponent after rounding, so 9.9999999999 counts as 10.
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let exp: i32 = sci[sci.find('e').expect("scientific format") + 1..]
        .parse()
        .expect("integer exponent");
    if !(-5..9).contains(&exp) {
        return sci;
    }
    let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

/// A CSV file with `\n` line endings and a fixed header.
pub struct CsvOut {
    path: std::path::PathBuf,
    inner: csv::Writer<std::fs::File>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(|e| HarnessError::csv(path, e))?;
        inner.write_record(header).map_err(|e| HarnessError::csv(path, e))?;
        Ok(Self {
            path: path.to_owned(),
            inner,
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner
            .write_record(fields)
            .map_err(|e| HarnessError::csv(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| HarnessError::csv(&self.path, e.into()))
    }
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| HarnessError::csv(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}

/// Create `dir` and delete files in it whose names match `stale`.
pub fn prepare_dir(dir: &Path, stale: impl Fn(&str) -> bool) -> Result<()> {
    let io = |e: std::io::Error| HarnessError::Data(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        let name = entry.file_name();
        if entry.file_type().map_err(io)?.is_file() && name.to_str().is_some_and(&stale) {
            std::fs::remove_file(entry.path()).map_err(io)?;
        }
    }
    Ok(())
}
