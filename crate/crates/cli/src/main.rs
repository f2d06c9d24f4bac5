mod args;
mod config;
mod eval;
mod infer;
mod plot;
mod prep;
mod report;
mod train;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use deshadow_core::pairing::png_stems;
use deshadow_core::{Error, Result};

use args::{Cli, Command};
use config::PipelineConfig;

/// Usage and configuration problems.
const EXIT_USAGE: u8 = 1;
/// Missing, malformed or unpaired inputs.
const EXIT_DATA: u8 = 2;
/// Non-finite values or divergence.
const EXIT_NUMERICS: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) | Error::Spec(_) => EXIT_USAGE,
        Error::Numerics { .. } | Error::Diverged { .. } => EXIT_NUMERICS,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    eprintln!("config hash: {}", cfg.hash());
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::Argument("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::State(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::PrepMask(a) => prep::run(&cfg, a),
        Command::Train(a) => train::run(&cfg, a),
        Command::Infer(a) => infer::run(&cfg, a),
        Command::Eval(a) => eval::run(&cfg, a),
        Command::Report(a) => report::run(&cfg, a),
    }
}

/// A single PNG or every PNG in a directory, keyed by file stem.
fn collect_inputs(path: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if path.is_dir() {
        let found = png_stems(path)?;
        if found.is_empty() {
            return Err(Error::EmptyDataset(path.to_path_buf()));
        }
        return Ok(found);
    }
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Argument(format!("bad file name: {}", path.display())))?;
    Ok(BTreeMap::from([(stem.to_string(), path.to_path_buf())]))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else if path.exists() {
        Err(Error::Argument(format!("{what} is not a directory: {}", path.display())))
    } else {
        Err(Error::NotFound(path.to_path_buf()))
    }
}

fn resize_opt(n: Option<usize>) -> Option<usize> {
    n.filter(|&n| n > 0)
}
