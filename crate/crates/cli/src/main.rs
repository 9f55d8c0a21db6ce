//! `mars`: run decodes, benchmarks and analyses from a TOML run config.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Mode;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "mars", version, about = "Masked-diffusion decoding with asynchronous cache refreshing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run config (TOML).
    config: PathBuf,
    /// Override a config key, e.g. `--set decode.num_steps=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set output_dir=...`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(dir) = &self.output_dir {
            overrides.push(format!("output_dir={:?}", dir.display().to_string()));
        }
        RunConfig::load(&self.config, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Decode once; writes tokens.txt, trace.jsonl and config.toml.
    Decode(Common),
    /// Run every engine in `bench.engines` on the same workload; writes bench.csv.
    Bench(Common),
    /// Write one analysis report (<mode>.csv).
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Decode trace to cross-check (cost mode only).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Decode(c) => c.load().and_then(|cfg| commands::cmd_decode(&cfg)),
        Command::Bench(c) => c.load().and_then(|cfg| commands::cmd_bench(&cfg)),
        Command::Analyze { common, mode, trace } => common
            .load()
            .and_then(|cfg| commands::cmd_analyze(&cfg, *mode, trace.as_deref())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
