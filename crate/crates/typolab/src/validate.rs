// SPDX-License-Identifier: MIT OR Apache-2.0

//! `validate`: check every record of a dump directory.

use std::fmt::Write as _;

use typolab_core::store::{DumpManifest, ValidationReport};

use crate::config::ExperimentConfig;
use crate::error::Result;

pub fn run(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    let dir = cfg.dumps_dir();
    let manifest = DumpManifest::load(&dir)?;
    Ok(manifest.validate(&dir))
}

/// One line per failing record plus a closing total.
pub fn render(report: &ValidationReport) -> String {
    let mut out = String::new();
    for (file, err) in &report.errors {
        let _ = writeln!(out, "FAIL {file}: {}: {err}", err.kind());
    }
    let _ = writeln!(
        out,
        "checked {} record(s): {} error(s)",
        report.checked,
        report.errors.len()
    );
    out
}
