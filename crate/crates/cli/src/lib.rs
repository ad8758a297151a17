//! Scenario orchestration for the `relaydex` binary: configuration
//! ingestion, index-table precomputation with a disk cache, batch
//! execution over (sweep point × policy × seed), and plot-ready CSV plus
//! JSON-summary output.
//!
//! The library surface exists so integration tests can drive the exact
//! code path the binary runs.

pub mod cache;
pub mod config;
pub mod runner;

pub use cache::{precompute_tables, table_key, CacheStats};
pub use config::{load_config, ScenarioSpec, Sweep, SweepPoint};
pub use runner::{read_csv_rows, run_scenario, RunOptions, ScenarioOutput, CSV_HEADER};
