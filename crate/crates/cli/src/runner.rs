//! Scenario execution: sweep × policy grid, CSV rows, and a JSON summary.
//!
//! Output contract: one CSV row per (sweep point, policy), points in
//! configured sweep order and policies in configured list order, each row
//! flushed as soon as it is computed so partial results survive a failure.
//! All computed numbers print with 17 significant digits (`{:.16e}`) and
//! `\n` line endings, making the bytes reproducible for a fixed scenario
//! and seed list regardless of thread count.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use relaydex::sim::{self, BatchSummary, MetricStat};
use relaydex::{IndexTable, OnFail, SimOptions, SystemConfig};
use serde::Serialize;

use crate::cache::{precompute_tables, table_key};
use crate::config::{ScenarioSpec, SweepPoint};

/// CSV header, fixed field order.
pub const CSV_HEADER: &str = "scenario,sweep_value,policy,seeds_count,\
    avg_cost_mean,avg_cost_stderr,avg_delay_mean,avg_delay_stderr,\
    throughput_mean,throughput_stderr,delivered_mean,drops_suppressed_mean";

/// Execution knobs that live outside the scenario file.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Prepended verbatim to output file names (may include a directory).
    pub out_prefix: String,
    /// Simulation worker threads; `None` uses the global default.
    pub threads: Option<usize>,
    /// What a relay does with the head packet after a failed transmit.
    pub on_fail: OnFail,
    /// Index-table cache directory.
    pub cache_dir: PathBuf,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            out_prefix: String::new(),
            threads: None,
            on_fail: OnFail::default(),
            cache_dir: PathBuf::from("index-cache"),
        }
    }
}

/// Where the results landed.
#[derive(Debug)]
pub struct ScenarioOutput {
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
    pub rows: usize,
}

#[derive(Serialize)]
struct SummaryRow {
    sweep_value: Option<String>,
    policy: &'static str,
    seeds_count: usize,
    avg_cost: MetricStat,
    avg_delay: MetricStat,
    throughput: MetricStat,
    delivered: MetricStat,
    drops_suppressed: MetricStat,
}

#[derive(Serialize)]
struct Summary<'a> {
    scenario: &'a str,
    config_hash: &'a str,
    config: &'a ScenarioSpec,
    seeds: &'a [u64],
    results: Vec<SummaryRow>,
}

/// Run every (sweep point × policy) batch and write `<prefix><name>.csv`
/// plus `<prefix><name>.summary.json`.
///
/// Index tables are precomputed (or loaded from cache) first when any
/// requested policy needs them. Each CSV row is flushed on write.
pub fn run_scenario(spec: &ScenarioSpec, opts: &RunOptions) -> Result<ScenarioOutput> {
    let tables = if spec.policies.iter().any(|p| p.needs_tables()) {
        let (tables, stats) = precompute_tables(spec, &opts.cache_dir)?;
        eprintln!(
            "index tables: {} computed, {} loaded ({})",
            stats.computed,
            stats.loaded,
            opts.cache_dir.display()
        );
        Some(tables)
    } else {
        None
    };

    let csv_path = PathBuf::from(format!("{}{}.csv", opts.out_prefix, spec.name));
    let summary_path = PathBuf::from(format!("{}{}.summary.json", opts.out_prefix, spec.name));
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output dir {}", dir.display()))?;
    }

    let hash = spec.config_hash();
    let mut writer = BufWriter::new(
        File::create(&csv_path)
            .with_context(|| format!("cannot create {}", csv_path.display()))?,
    );
    write_preamble(&mut writer, spec, &hash)?;

    let mut body = || run_points(spec, tables.as_ref(), opts, &mut writer);
    let results = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("cannot build thread pool")?
            .install(body),
        None => body(),
    }?;

    let rows = results.len();
    let summary = Summary {
        scenario: &spec.name,
        config_hash: &hash,
        config: spec,
        seeds: &spec.seeds,
        results,
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(&summary_path, text)
        .with_context(|| format!("cannot write {}", summary_path.display()))?;

    Ok(ScenarioOutput { csv_path, summary_path, rows })
}

fn write_preamble(w: &mut impl Write, spec: &ScenarioSpec, hash: &str) -> Result<()> {
    writeln!(w, "# scenario: {}", spec.name)?;
    writeln!(w, "# config_hash: {hash}")?;
    let seeds: Vec<String> = spec.seeds.iter().map(u64::to_string).collect();
    writeln!(w, "# seeds: {}", seeds.join(","))?;
    writeln!(w, "{CSV_HEADER}")?;
    Ok(())
}

fn run_points(
    spec: &ScenarioSpec,
    tables: Option<&BTreeMap<String, IndexTable>>,
    opts: &RunOptions,
    writer: &mut BufWriter<File>,
) -> Result<Vec<SummaryRow>> {
    let sim_opts = SimOptions { on_fail: opts.on_fail, ..SimOptions::default() };
    let mut results = Vec::new();
    for point in spec.sweep_points() {
        let point_tables = tables.map(|set| assemble_tables(set, &point, &spec.whittle));
        for &policy in &spec.policies {
            let config = SystemConfig {
                relays: point.relays.clone(),
                horizon: spec.horizon,
                seed: 0, // overridden per seed by run_batch
                policy,
            };
            let table_arg =
                if policy.needs_tables() { point_tables.as_deref() } else { None };
            let batch = sim::run_batch(&config, table_arg, &spec.seeds, &sim_opts)
                .with_context(|| {
                    format!(
                        "simulating policy {} at sweep value {}",
                        policy.name(),
                        point.label.as_deref().unwrap_or("-")
                    )
                })?;
            write_row(writer, spec, &point, policy.name(), &batch.summary)?;
            writer.flush()?; // partial results survive a later failure
            results.push(SummaryRow {
                sweep_value: point.label.clone(),
                policy: policy.name(),
                seeds_count: spec.seeds.len(),
                avg_cost: batch.summary.avg_cost,
                avg_delay: batch.summary.avg_delay,
                throughput: batch.summary.throughput,
                delivered: batch.summary.delivered,
                drops_suppressed: batch.summary.drops_suppressed,
            });
        }
    }
    Ok(results)
}

/// Per-relay tables for one sweep point, in relay order, tagged with the
/// relay's position.
fn assemble_tables(
    set: &BTreeMap<String, IndexTable>,
    point: &SweepPoint,
    whittle: &relaydex::WhittleConfig,
) -> Vec<IndexTable> {
    point
        .relays
        .iter()
        .enumerate()
        .map(|(i, p)| {
            set.get(&table_key(p, whittle))
                .expect("precompute covers every sweep point")
                .clone()
                .with_relay_id(i)
        })
        .collect()
}

fn write_row(
    w: &mut impl Write,
    spec: &ScenarioSpec,
    point: &SweepPoint,
    policy: &str,
    s: &BatchSummary,
) -> Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        spec.name,
        point.label.as_deref().unwrap_or(""),
        policy,
        spec.seeds.len(),
        csv_float(s.avg_cost.mean),
        csv_float(s.avg_cost.stderr),
        csv_float(s.avg_delay.mean),
        csv_float(s.avg_delay.stderr),
        csv_float(s.throughput.mean),
        csv_float(s.throughput.stderr),
        csv_float(s.delivered.mean),
        csv_float(s.drops_suppressed.mean),
    )?;
    Ok(())
}

/// 17 significant digits: enough to round-trip any f64, few enough to be
/// stable across platforms.
fn csv_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Re-read a results CSV (header comments skipped) — used by tests and the
/// acceptance suite to compare runs structurally.
pub fn read_csv_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    Ok(text
        .lines()
        .filter(|line| !line.starts_with('#') && !line.is_empty())
        .skip(1) // header
        .map(|line| line.split(',').map(str::to_string).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Sweep;
    use relaydex::{PolicyKind, RelayParams, WhittleConfig};

    fn small_spec() -> ScenarioSpec {
        ScenarioSpec {
            name: "runner-test".into(),
            horizon: 300,
            relays: vec![
                RelayParams::new(0.3, 0.6, 1.0, 20),
                RelayParams::new(0.2, 0.7, 2.0, 20),
            ],
            policies: vec![PolicyKind::Random, PolicyKind::LoadBased],
            seeds: vec![11, 12, 13],
            sweep: Some(Sweep::RelayCount(vec![1, 2])),
            whittle: WhittleConfig::default(),
        }
    }

    fn opts_in(dir: &Path, sub: &str) -> RunOptions {
        RunOptions {
            out_prefix: format!("{}/{sub}-", dir.display()),
            cache_dir: dir.join("cache"),
            ..RunOptions::default()
        }
    }

    #[test]
    fn rows_are_ordered_sweep_point_then_policy() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_scenario(&small_spec(), &opts_in(dir.path(), "a")).unwrap();
        assert_eq!(out.rows, 4);
        let rows = read_csv_rows(&out.csv_path).unwrap();
        let order: Vec<(String, String)> =
            rows.iter().map(|r| (r[1].clone(), r[2].clone())).collect();
        assert_eq!(
            order,
            [("1", "random"), ("1", "load"), ("2", "random"), ("2", "load")]
                .map(|(v, p)| (v.to_string(), p.to_string()))
        );
        // Fixed shape: 12 fields, scenario name first, seeds_count echoed.
        assert!(rows.iter().all(|r| r.len() == 12));
        assert!(rows.iter().all(|r| r[0] == "runner-test" && r[3] == "3"));
    }

    #[test]
    fn preamble_embeds_hash_and_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec();
        let out = run_scenario(&spec, &opts_in(dir.path(), "b")).unwrap();
        let text = std::fs::read_to_string(&out.csv_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# scenario: runner-test"));
        assert_eq!(lines.next().unwrap(), format!("# config_hash: {}", spec.config_hash()));
        assert_eq!(lines.next(), Some("# seeds: 11,12,13"));
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert!(text.ends_with('\n') && !text.contains('\r'));
    }

    #[test]
    fn bytes_match_across_thread_counts_and_reruns() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec();
        let single = run_scenario(
            &spec,
            &RunOptions { threads: Some(1), ..opts_in(dir.path(), "t1") },
        )
        .unwrap();
        let eight = run_scenario(
            &spec,
            &RunOptions { threads: Some(8), ..opts_in(dir.path(), "t8") },
        )
        .unwrap();
        let rerun = run_scenario(
            &spec,
            &RunOptions { threads: Some(8), ..opts_in(dir.path(), "t8x") },
        )
        .unwrap();
        let a = std::fs::read(single.csv_path).unwrap();
        let b = std::fs::read(eight.csv_path).unwrap();
        let c = std::fs::read(rerun.csv_path).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
    }

    #[test]
    fn whittle_rows_run_from_cached_tables() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = small_spec();
        spec.sweep = None;
        spec.policies = vec![PolicyKind::Whittle];
        let first = run_scenario(&spec, &opts_in(dir.path(), "w1")).unwrap();
        assert_eq!(first.rows, 1);
        // Second run hits the cache (same cache dir) and reproduces bytes.
        let second = run_scenario(&spec, &opts_in(dir.path(), "w2")).unwrap();
        assert_eq!(
            std::fs::read(first.csv_path).unwrap(),
            std::fs::read(second.csv_path).unwrap()
        );
    }

    #[test]
    fn summary_echoes_config_and_results() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec();
        let out = run_scenario(&spec, &opts_in(dir.path(), "s")).unwrap();
        let text = std::fs::read_to_string(&out.summary_path).unwrap();
        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(json["scenario"], "runner-test");
        assert_eq!(json["config_hash"], spec.config_hash().as_str());
        assert_eq!(json["config"]["T"], 300);
        assert_eq!(json["config"]["sweep"]["variable"], "M");
        assert_eq!(json["seeds"].as_array().unwrap().len(), 3);
        let results = json["results"].as_array().unwrap();
        assert_eq!(results.len(), 4);
        assert!(results[0]["avg_cost"]["mean"].is_f64());
        assert!(results[0]["avg_cost"]["stderr"].is_f64());
    }
}
