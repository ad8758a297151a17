//! Scenario files: JSON schema, validation, and sweep expansion.
//!
//! A scenario file describes one experiment: the relay fleet, the horizon,
//! which policies to compare, the seed list, and optionally a one-variable
//! sweep (relay count or a common channel probability). Loading applies the
//! model validator; hard invariant violations abort with the offending
//! field named, stability advisories go to stderr and never abort.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use relaydex::model;
use relaydex::{PolicyKind, RelayParams, WhittleConfig};
use serde::{Deserialize, Serialize};

/// A fully resolved, validated scenario.
///
/// Serializing this struct echoes the input schema (`T`, per-relay `C`/`K`,
/// tagged sweep), so the summary-file config echo round-trips.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub relays: Vec<RelayParams>,
    pub policies: Vec<PolicyKind>,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    pub whittle: WhittleConfig,
}

/// One-variable experiment sweep.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "variable", content = "values")]
pub enum Sweep {
    /// Vary the number of relays; each point uses the first `m` entries of
    /// the configured parameter vectors, which must cover the largest `m`.
    #[serde(rename = "M")]
    RelayCount(Vec<u32>),
    /// Replace every relay's source-hop probability with a common value.
    #[serde(rename = "f_common")]
    CommonF(Vec<f64>),
    /// Replace every relay's relay-hop probability with a common value.
    #[serde(rename = "l_common")]
    CommonL(Vec<f64>),
}

/// One expanded sweep point: the relay fleet to simulate and the value
/// printed in the CSV `sweep_value` column (`None` when there is no sweep).
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub label: Option<String>,
    pub relays: Vec<RelayParams>,
}

impl ScenarioSpec {
    /// Expand the sweep into concrete relay fleets, in configured order.
    pub fn sweep_points(&self) -> Vec<SweepPoint> {
        match &self.sweep {
            None => vec![SweepPoint { label: None, relays: self.relays.clone() }],
            Some(Sweep::RelayCount(ms)) => ms
                .iter()
                .map(|&m| SweepPoint {
                    label: Some(m.to_string()),
                    relays: self.relays[..m as usize].to_vec(),
                })
                .collect(),
            Some(Sweep::CommonF(fs)) => fs
                .iter()
                .map(|&f| SweepPoint {
                    label: Some(float_label(f)),
                    relays: self.relays.iter().map(|r| RelayParams { f, ..*r }).collect(),
                })
                .collect(),
            Some(Sweep::CommonL(ls)) => ls
                .iter()
                .map(|&l| SweepPoint {
                    label: Some(float_label(l)),
                    relays: self.relays.iter().map(|r| RelayParams { l, ..*r }).collect(),
                })
                .collect(),
        }
    }

    /// Hex SHA-256 of the resolved scenario, embedded in every output file
    /// so a result can be traced back to the exact configuration.
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Shortest decimal that round-trips the value — what `0.1` in the config
/// file prints as in the `sweep_value` column.
fn float_label(v: f64) -> String {
    serde_json::Number::from_f64(v).map_or_else(|| v.to_string(), |n| n.to_string())
}

// ── Raw JSON schema ────────────────────────────────────────────────────

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    #[serde(rename = "T")]
    t: u64,
    buffer: RawBuffer,
    relays: Vec<RawRelay>,
    policies: Vec<String>,
    seeds: Vec<u64>,
    #[serde(default)]
    sweep: Option<RawSweep>,
    #[serde(default)]
    whittle: Option<RawWhittle>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawBuffer {
    Scalar(u32),
    PerRelay(Vec<u32>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRelay {
    f: f64,
    l: f64,
    #[serde(rename = "C")]
    c: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    variable: String,
    values: Vec<serde_json::Value>,
}

/// Optional overrides over [`WhittleConfig::default`].
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWhittle {
    beta: Option<f64>,
    max_iter: Option<u32>,
    tol_lambda: Option<f64>,
    dense_prefix: Option<u32>,
    grid_stride: Option<u32>,
    mode: Option<relaydex::IndexMode>,
}

// ── Loading ────────────────────────────────────────────────────────────

/// Read and validate a scenario file.
///
/// Schema and invariant violations return an error naming the offending
/// field; stability advisories (from the model validator, evaluated at each
/// sweep point) are printed to stderr and never abort.
pub fn load_config(path: &Path) -> Result<ScenarioSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let raw: RawScenario = serde_json::from_str(&text)
        .map_err(|e| anyhow!("config {}: {e}", path.display()))?;
    resolve(raw).with_context(|| format!("config {}", path.display()))
}

fn resolve(raw: RawScenario) -> Result<ScenarioSpec> {
    if raw.name.is_empty() || raw.name.contains(',') || raw.name.contains('\n') {
        bail!("name: must be non-empty and free of commas/newlines (it becomes a CSV field)");
    }

    let buffers = match raw.buffer {
        RawBuffer::Scalar(k) => vec![k; raw.relays.len()],
        RawBuffer::PerRelay(ks) => {
            if ks.len() != raw.relays.len() {
                bail!("buffer: expected 1 or {} entries, got {}", raw.relays.len(), ks.len());
            }
            ks
        }
    };
    let relays: Vec<RelayParams> = raw
        .relays
        .iter()
        .zip(&buffers)
        .map(|(r, &k)| RelayParams::new(r.f, r.l, r.c, k))
        .collect();

    if raw.policies.is_empty() {
        bail!("policies: no policies requested");
    }
    let policies = raw
        .policies
        .iter()
        .enumerate()
        .map(|(i, name)| {
            PolicyKind::ALL
                .iter()
                .copied()
                .find(|p| p.name() == name)
                .ok_or_else(|| {
                    anyhow!(
                        "policies[{i}]: unknown policy {name:?} (expected one of \
                         random, load, mmrs, mlrs, whittle)"
                    )
                })
        })
        .collect::<Result<Vec<_>>>()?;

    if raw.seeds.is_empty() {
        bail!("seeds: at least one seed is required");
    }

    let sweep = raw.sweep.map(|s| resolve_sweep(s, relays.len())).transpose()?;
    let whittle = resolve_whittle(raw.whittle)?;

    let spec = ScenarioSpec {
        name: raw.name,
        horizon: raw.t,
        relays,
        policies,
        seeds: raw.seeds,
        sweep,
        whittle,
    };

    // Model validation at every operating point the scenario will visit.
    // Errors accumulate and abort; warnings are advisory and deduplicated.
    let mut errors = String::new();
    let mut warnings: Vec<String> = Vec::new();
    for point in spec.sweep_points() {
        let at = point.label.as_ref().map_or(String::new(), |v| format!(" (sweep value {v})"));
        for d in model::validate(&point.relays, spec.horizon) {
            if d.is_error() {
                let _ = write!(errors, "\n  {d}{at}");
            } else {
                let line = format!("{d}{at}");
                if !warnings.contains(&line) {
                    warnings.push(line);
                }
            }
        }
    }
    if !errors.is_empty() {
        bail!("invalid scenario:{errors}");
    }
    for w in warnings {
        eprintln!("{w}");
    }
    Ok(spec)
}

fn resolve_sweep(raw: RawSweep, relay_count: usize) -> Result<Sweep> {
    if raw.values.is_empty() {
        bail!("sweep.values: at least one value is required");
    }
    match raw.variable.as_str() {
        "M" => {
            let ms = raw
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let m = v
                        .as_u64()
                        .filter(|&m| m >= 1)
                        .ok_or_else(|| anyhow!("sweep.values[{i}]: M must be a positive integer, got {v}"))?;
                    if m as usize > relay_count {
                        bail!(
                            "sweep.values[{i}]: M = {m} exceeds the {relay_count} configured \
                             relays (parameter vectors must cover the largest M)"
                        );
                    }
                    Ok(m as u32)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Sweep::RelayCount(ms))
        }
        var @ ("f_common" | "l_common") => {
            let ps = raw
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v.as_f64()
                        .filter(|p| *p > 0.0 && *p < 1.0)
                        .ok_or_else(|| {
                            anyhow!(
                                "sweep.values[{i}]: {var} must be a probability strictly in \
                                 (0,1), got {v}"
                            )
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(if var == "f_common" { Sweep::CommonF(ps) } else { Sweep::CommonL(ps) })
        }
        other => bail!("sweep.variable: expected one of M, f_common, l_common; got {other:?}"),
    }
}

fn resolve_whittle(raw: Option<RawWhittle>) -> Result<WhittleConfig> {
    let mut cfg = WhittleConfig::default();
    let Some(raw) = raw else { return Ok(cfg) };
    if let Some(beta) = raw.beta {
        if !(beta > 0.0) {
            bail!("whittle.beta: must be positive, got {beta}");
        }
        cfg.beta = beta;
    }
    if let Some(max_iter) = raw.max_iter {
        if max_iter == 0 {
            bail!("whittle.max_iter: must be at least 1");
        }
        cfg.max_iter = max_iter;
    }
    if let Some(tol) = raw.tol_lambda {
        if !(tol > 0.0) {
            bail!("whittle.tol_lambda: must be positive, got {tol}");
        }
        cfg.tol_lambda = tol;
    }
    if let Some(dense_prefix) = raw.dense_prefix {
        cfg.dense_prefix = dense_prefix;
    }
    if let Some(stride) = raw.grid_stride {
        if stride == 0 {
            bail!("whittle.grid_stride: must be at least 1");
        }
        cfg.grid_stride = Some(stride);
    }
    if let Some(mode) = raw.mode {
        cfg.mode = mode;
    }
    Ok(cfg)
}
