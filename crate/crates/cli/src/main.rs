//! Batch experiment harness: `train`, `verify`, `couple` and `sweep` each read
//! one JSON config and write a self-describing run directory under
//! `$RUNS_DIR` (default `runs`).
//!
//! Exit codes: 0 success, 1 failed checks or I/O failure, 2 divergence,
//! 3 invalid input.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use skiplab::data::save_dataset;
use skiplab::Error;

use commands::Output;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "skiplab", version, about = "Skip-connection network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the config's seed; the run's config copy records the new value.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its trajectory.
    Train(Common),
    /// Run the landscape bound checks at initialization.
    Verify(Common),
    /// Paired deep-net and reference runs with their gap series.
    Couple(Common),
    /// Depth and seed grid with a summary table.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Verify(_) => "verify",
            Command::Couple(_) => "couple",
            Command::Sweep { .. } => "sweep",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Train(c) | Command::Verify(c) | Command::Couple(c) => c,
            Command::Sweep { common, .. } => common,
        }
    }
}

const EXIT_FAIL: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_INVALID: u8 = 3;

fn runs_root() -> PathBuf {
    std::env::var_os("RUNS_DIR").map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// Writes every output file, removing the directory again if anything fails
/// and the directory did not exist before.
fn write_run(dir: &Path, out: &Output) -> std::io::Result<()> {
    let existed = dir.exists();
    let result = (|| {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &out.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        if let Some(ds) = &out.dataset {
            save_dataset(ds, &dir.join("data.csv")).map_err(std::io::Error::other)?;
        }
        Ok(())
    })();
    if result.is_err() && !existed {
        let _ = std::fs::remove_dir_all(dir);
    }
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = cli.command.common();
    let cfg = match RunConfig::load(&common.config, common.seed_override) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let result = match &cli.command {
        Command::Train(_) => commands::train(&cfg),
        Command::Verify(_) => commands::verify(&cfg),
        Command::Couple(_) => commands::couple(&cfg),
        Command::Sweep { jobs, .. } => commands::sweep(&cfg, *jobs),
    };
    let dir = runs_root().join(format!("{}-{}", cfg.name, cli.command.name()));
    let (out, code) = match result {
        Ok(out) => {
            let code = if out.all_pass { 0 } else { EXIT_FAIL };
            (out, code)
        }
        Err(e @ Error::Divergence { .. }) => {
            eprintln!("error: {e}");
            match commands::divergence_output(&cfg, &e) {
                Ok(out) => (out, EXIT_DIVERGED),
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_FAIL);
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    if let Err(e) = write_run(&dir, &out) {
        eprintln!("error: cannot write {}: {e}", dir.display());
        return ExitCode::from(EXIT_FAIL);
    }
    println!("{}", dir.display());
    ExitCode::from(code)
}
