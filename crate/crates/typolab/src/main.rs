// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use typolab::error::{EXIT_DATA, EXIT_OK};
use typolab::{gen, metrics, report, run_ref, validate, ExperimentConfig, HarnessError, Overrides};
use typolab_core::metrics::NegCorrMode;

/// Typoglycemia interpretability harness.
///
/// Log verbosity follows the TYPOLAB_LOG environment variable
/// (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "typolab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand)]
enum Command {
    /// Build the SR x CI dataset from a corpus.
    Gen,
    /// Run the reference transformer over the dataset and write dumps.
    RunRef,
    /// Check a dump directory against its manifest.
    Validate,
    /// Compute metric tables from dumps.
    Metrics,
    /// Turn metric tables into plot-data bundles.
    Report,
}

#[derive(Args)]
struct Opts {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Scramble-ratio levels, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    sr: Option<Vec<f64>>,
    /// Context-integrity levels, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    ci: Option<Vec<f64>>,
    /// Masking and scrambling seeds, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dump directory.
    #[arg(long, global = true)]
    dumps: Option<PathBuf>,
    /// per-word or pooled.
    #[arg(long, global = true)]
    negcorr_mode: Option<NegCorrMode>,
    /// Number of form-sensitive heads per SR level.
    #[arg(long, global = true)]
    top_k: Option<usize>,
    /// Skip samples without a baseline instead of failing.
    #[arg(long, global = true)]
    allow_partial: bool,
}

fn load(opts: &Opts) -> typolab::Result<ExperimentConfig> {
    let mut cfg = match &opts.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        sr_levels: opts.sr.clone(),
        ci_levels: opts.ci.clone(),
        seeds: opts.seeds.clone(),
        out: opts.out.clone(),
        dumps: opts.dumps.clone(),
        negcorr_mode: opts.negcorr_mode,
        top_k: opts.top_k,
        allow_partial: opts.allow_partial,
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> typolab::Result<i32> {
    let cfg = load(&cli.opts)?;
    match cli.command {
        Command::Gen => {
            let s = gen::run(&cfg)?;
            println!(
                "gen: {} candidates, {} samples, {} skipped -> {}",
                s.candidates,
                s.samples,
                s.skips,
                cfg.dataset_dir().display()
            );
        }
        Command::RunRef => {
            let s = run_ref::run(&cfg)?;
            println!(
                "run-ref: {} dumps ({} synthesized baselines), {} skipped -> {}",
                s.written,
                s.synthesized_baselines,
                s.skipped,
                cfg.dumps_dir().display()
            );
        }
        Command::Validate => {
            let r = validate::run(&cfg)?;
            print!("{}", validate::render(&r));
            if !r.is_ok() {
                return Ok(EXIT_DATA);
            }
        }
        Command::Metrics => {
            let m = metrics::run(&cfg)?;
            println!(
                "metrics: {} samples scored, {} skipped -> {}",
                m.samples_scored,
                m.skipped,
                cfg.metrics_dir().display()
            );
        }
        Command::Report => {
            let files = report::run(&cfg)?;
            println!("report: {} bundles -> {}", files.len(), cfg.report_dir().display());
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TYPOLAB_LOG", "warn")).init();
    let cli = Cli::parse();
    let code = execute(&cli).unwrap_or_else(|e: HarnessError| {
        eprintln!("error: {e}");
        e.exit_code()
    });
    ExitCode::from(code as u8)
}
