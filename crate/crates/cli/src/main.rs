//! `stsae`: synthesis, training, evaluation, sweeps, ablation and retrieval
//! over STSF feature files.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or validation
//! errors.

mod commands;
mod config;
mod sweep;

use std::process::ExitCode;

use clap::Parser;

use crate::commands::Cli;

/// Marks an error as a usage/validation problem (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Core validation failures surface as usage errors.
pub fn validation(e: stsae_core::Error) -> anyhow::Error {
    match e {
        stsae_core::Error::InvalidArgument(m) => usage(m),
        other => other.into(),
    }
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("STSAE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("STSAE_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match init_threads().and_then(|_| commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
