//! Relay-selection policies.
//!
//! Every policy maps the per-slot context (queue lengths, relay parameters,
//! optional index tables) to exactly one relay id. All ties break uniformly
//! at random from the context's dedicated RNG stream, so tie-breaking never
//! perturbs the channel randomness.

use crate::model::RelayParams;
use crate::whittle::{IndexTable, WhittleError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The available selection rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    /// Uniform over relays, state-blind.
    #[serde(rename = "random")]
    Random,
    /// Shortest queue first.
    #[serde(rename = "load")]
    LoadBased,
    /// Best bottleneck link: maximize `min(f, l)`, state-blind.
    #[serde(rename = "mmrs")]
    Mmrs,
    /// Largest backlog-weighted drain: maximize `queue · l`.
    #[serde(rename = "mlrs")]
    Mlrs,
    /// Smallest Whittle index at the current queue length.
    #[serde(rename = "whittle")]
    Whittle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Random,
        PolicyKind::LoadBased,
        PolicyKind::Mmrs,
        PolicyKind::Mlrs,
        PolicyKind::Whittle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::LoadBased => "load",
            PolicyKind::Mmrs => "mmrs",
            PolicyKind::Mlrs => "mlrs",
            PolicyKind::Whittle => "whittle",
        }
    }

    /// Whether this policy needs precomputed index tables.
    pub fn needs_tables(&self) -> bool {
        matches!(self, PolicyKind::Whittle)
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, fmt: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fmt.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(PolicyKind::Random),
            "load" => Ok(PolicyKind::LoadBased),
            "mmrs" => Ok(PolicyKind::Mmrs),
            "mlrs" => Ok(PolicyKind::Mlrs),
            "whittle" => Ok(PolicyKind::Whittle),
            other => Err(PolicyError::UnknownPolicy(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("unknown policy {0:?} (expected random, load, mmrs, mlrs, or whittle)")]
    UnknownPolicy(String),
    #[error("no relays to select from")]
    EmptyRelaySet,
    #[error("whittle policy requires an index table per relay ({got} tables for {relays} relays)")]
    MissingTables { got: usize, relays: usize },
    #[error(transparent)]
    Index(#[from] WhittleError),
}

/// Everything a policy may look at in one slot.
pub struct PolicyContext<'a> {
    pub slot: u64,
    pub queues: &'a [u32],
    pub params: &'a [RelayParams],
    pub index_tables: Option<&'a [IndexTable]>,
    /// Dedicated tie-breaking stream (also drives [`PolicyKind::Random`]).
    pub rng: &'a mut ChaCha8Rng,
}

/// Pick uniformly among the relays minimizing `key` (exact-equality ties).
///
/// Consumes one RNG draw only when there actually is a tie, which is fine
/// because this stream is reserved for the policy.
fn argmin_uniform(keys: &[f64], rng: &mut ChaCha8Rng) -> usize {
    debug_assert!(!keys.is_empty());
    let best = keys.iter().copied().fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> =
        (0..keys.len()).filter(|&i| keys[i] == best).collect();
    match tied.len() {
        1 => tied[0],
        n => tied[rng.gen_range(0..n)],
    }
}

pub fn select_random(ctx: &mut PolicyContext) -> Result<usize, PolicyError> {
    if ctx.params.is_empty() {
        return Err(PolicyError::EmptyRelaySet);
    }
    Ok(ctx.rng.gen_range(0..ctx.params.len()))
}

pub fn select_load_based(ctx: &mut PolicyContext) -> Result<usize, PolicyError> {
    if ctx.params.is_empty() {
        return Err(PolicyError::EmptyRelaySet);
    }
    let keys: Vec<f64> = ctx.queues.iter().map(|&q| f64::from(q)).collect();
    Ok(argmin_uniform(&keys, ctx.rng))
}

pub fn select_mmrs(ctx: &mut PolicyContext) -> Result<usize, PolicyError> {
    if ctx.params.is_empty() {
        return Err(PolicyError::EmptyRelaySet);
    }
    // Maximize min(f, l) == minimize its negation.
    let keys: Vec<f64> = ctx.params.iter().map(|p| -p.f.min(p.l)).collect();
    Ok(argmin_uniform(&keys, ctx.rng))
}

pub fn select_mlrs(ctx: &mut PolicyContext) -> Result<usize, PolicyError> {
    if ctx.params.is_empty() {
        return Err(PolicyError::EmptyRelaySet);
    }
    let keys: Vec<f64> = ctx
        .queues
        .iter()
        .zip(ctx.params)
        .map(|(&q, p)| -(f64::from(q) * p.l))
        .collect();
    Ok(argmin_uniform(&keys, ctx.rng))
}

pub fn select_whittle(ctx: &mut PolicyContext) -> Result<usize, PolicyError> {
    if ctx.params.is_empty() {
        return Err(PolicyError::EmptyRelaySet);
    }
    let tables = ctx.index_tables.unwrap_or(&[]);
    if tables.len() != ctx.params.len() {
        return Err(PolicyError::MissingTables { got: tables.len(), relays: ctx.params.len() });
    }
    let mut keys = Vec::with_capacity(tables.len());
    for (table, &q) in tables.iter().zip(ctx.queues) {
        keys.push(table.lookup(q)?);
    }
    Ok(argmin_uniform(&keys, ctx.rng))
}

/// Dispatch to the policy's selection rule.
pub fn select(kind: PolicyKind, ctx: &mut PolicyContext) -> Result<usize, PolicyError> {
    match kind {
        PolicyKind::Random => select_random(ctx),
        PolicyKind::LoadBased => select_load_based(ctx),
        PolicyKind::Mmrs => select_mmrs(ctx),
        PolicyKind::Mlrs => select_mlrs(ctx),
        PolicyKind::Whittle => select_whittle(ctx),
    }
}
