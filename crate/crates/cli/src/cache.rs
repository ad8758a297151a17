//! Disk cache for index tables.
//!
//! Index tables are a one-time precomputation: once built for a relay
//! parameter set and solver configuration, every later run reuses them.
//! Cache entries are keyed by a hash of exactly those two inputs, so a
//! parameter or tuning change can never pick up a stale table, and relays
//! that share parameters share one entry.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use relaydex::whittle::build_table;
use relaydex::{IndexTable, RelayParams, WhittleConfig};
use sha2::{Digest, Sha256};

use crate::config::ScenarioSpec;

/// How many tables a [`precompute_tables`] call built vs. reused.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub computed: usize,
    pub loaded: usize,
}

/// Cache key: hex SHA-256 over the relay parameters and solver tuning.
pub fn table_key(params: &RelayParams, cfg: &WhittleConfig) -> String {
    let payload = serde_json::json!({ "relay": params, "whittle": cfg });
    hex::encode(Sha256::digest(payload.to_string().as_bytes()))
}

fn entry_path(cache_dir: &Path, key: &str) -> PathBuf {
    cache_dir.join(format!("table-{key}.json"))
}

/// Tables for every distinct relay parameter set the scenario visits
/// (across all sweep points), keyed by [`table_key`]. Cached entries are
/// loaded when present and intact; anything else is computed and written
/// back. A corrupted or stale entry is recomputed with a warning.
pub fn precompute_tables(
    spec: &ScenarioSpec,
    cache_dir: &Path,
) -> Result<(BTreeMap<String, IndexTable>, CacheStats)> {
    let mut wanted: BTreeMap<String, RelayParams> = BTreeMap::new();
    for point in spec.sweep_points() {
        for relay in &point.relays {
            wanted.entry(table_key(relay, &spec.whittle)).or_insert(*relay);
        }
    }

    std::fs::create_dir_all(cache_dir)
        .with_context(|| format!("cannot create cache dir {}", cache_dir.display()))?;

    let mut tables = BTreeMap::new();
    let mut stats = CacheStats::default();
    for (key, params) in wanted {
        let path = entry_path(cache_dir, &key);
        if let Some(table) = try_load(&path, &params) {
            tables.insert(key, table);
            stats.loaded += 1;
            continue;
        }
        let table = build_table(&params, 0, &spec.whittle)
            .with_context(|| format!("building index table for relay {params:?}"))?;
        std::fs::write(&path, table.to_json()?)
            .with_context(|| format!("cannot write cache entry {}", path.display()))?;
        tables.insert(key, table);
        stats.computed += 1;
    }
    Ok((tables, stats))
}

/// Load a cache entry if it exists, parses, and matches the expected
/// parameters; otherwise warn (unless simply absent) and return None.
fn try_load(path: &Path, params: &RelayParams) -> Option<IndexTable> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
        Err(e) => {
            eprintln!("warning: cannot read cache entry {}: {e}; recomputing", path.display());
            return None;
        }
    };
    match IndexTable::from_json(&text) {
        Ok(table) if table.params == *params => Some(table),
        Ok(_) => {
            eprintln!(
                "warning: cache entry {} holds different parameters; recomputing",
                path.display()
            );
            None
        }
        Err(e) => {
            eprintln!("warning: cache entry {} is corrupted ({e}); recomputing", path.display());
            None
        }
    }
}
