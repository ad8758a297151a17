//! `relaydex` — relay-selection experiments from scenario files.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use relaydex::OnFail;
use relaydex_cli::{load_config, precompute_tables, run_scenario, RunOptions};

#[derive(Parser)]
#[command(
    name = "relaydex",
    version,
    about = "Index-policy relay selection: precompute per-relay index tables and \
             simulate selection policies over two-hop lossy links"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write `<out><name>.csv` + `<out><name>.summary.json`.
    Simulate {
        /// Scenario JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Output file-name prefix (may include a directory).
        #[arg(long, default_value = "")]
        out: String,
        /// Simulation worker threads (default: one per core).
        #[arg(long)]
        threads: Option<usize>,
        /// After a failed relay→destination transmit: retry | drop.
        #[arg(long, default_value = "retry")]
        on_fail: String,
        /// Index-table cache directory.
        #[arg(long, default_value = "index-cache")]
        cache_dir: PathBuf,
    },
    /// Precompute (and cache) index tables for a scenario, nothing else.
    Index {
        /// Scenario JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Index-table cache directory.
        #[arg(long, default_value = "index-cache")]
        cache_dir: PathBuf,
    },
    /// Parse and validate a scenario file, reporting diagnostics.
    Validate {
        /// Scenario JSON file.
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { config, out, threads, on_fail, cache_dir } => {
            let spec = load_config(&config)?;
            let on_fail: OnFail = on_fail
                .parse()
                .context("--on-fail accepts `retry` or `drop`")?;
            let opts = RunOptions { out_prefix: out, threads, on_fail, cache_dir };
            let done = run_scenario(&spec, &opts)?;
            println!("wrote {} ({} rows)", done.csv_path.display(), done.rows);
            println!("wrote {}", done.summary_path.display());
        }
        Command::Index { config, cache_dir } => {
            let spec = load_config(&config)?;
            let (tables, stats) = precompute_tables(&spec, &cache_dir)?;
            println!(
                "{} tables ready: {} computed, {} loaded ({})",
                tables.len(),
                stats.computed,
                stats.loaded,
                cache_dir.display()
            );
        }
        Command::Validate { config } => {
            let spec = load_config(&config)?;
            let points = spec.sweep_points();
            let sweep = match points.len() {
                1 => String::new(),
                n => format!(", sweep over {n} points"),
            };
            println!(
                "ok: {}: {} relays, horizon {}, {} policies, {} seeds{sweep}",
                spec.name,
                spec.relays.len(),
                spec.horizon,
                spec.policies.len(),
                spec.seeds.len(),
            );
        }
    }
    Ok(())
}
