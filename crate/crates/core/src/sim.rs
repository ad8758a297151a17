//! Slotted two-hop network simulator.
//!
//! One saturated source holds an infinite backlog. Each slot has two
//! mini-slots: first the policy picks one relay and the head-of-source
//! packet is transmitted to it (success probability `f`, accepted only if
//! the relay buffer has room); then every nonempty relay — including one
//! that just received the packet — delivers its head packet with
//! probability `l`. Per-slot cost is `Σ c_i · X_i` sampled at slot start.
//!
//! Randomness comes from a [`RngPlan`]: one named ChaCha substream per
//! purpose (policy tie-breaks, per-relay first-hop, per-relay second-hop).
//! Channel streams advance exactly once per relay per slot whether or not
//! the draw is used, so the realization at `(relay, slot)` is a pure
//! function of the master seed — two policies simulated under the same plan
//! face identical channels (common random numbers).

use crate::model::RelayParams;
use crate::policies::{self, PolicyError, PolicyKind};
use crate::whittle::IndexTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

/// One simulation run: relays, horizon in slots, master seed, and policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub relays: Vec<RelayParams>,
    pub horizon: u64,
    pub seed: u64,
    pub policy: PolicyKind,
}

/// What happens to the head-of-source packet when its transmission fails
/// (bad channel, or full buffer).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnFail {
    /// Keep it at the head and try again next slot.
    #[default]
    Retry,
    /// Abandon it; a fresh packet becomes head next slot.
    Drop,
}

impl std::str::FromStr for OnFail {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "retry" => Ok(OnFail::Retry),
            "drop" => Ok(OnFail::Drop),
            other => Err(SimError::UnknownOnFail(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    pub on_fail: OnFail,
    /// Record per-slot total cost into `SimReport::time_series`.
    pub record_time_series: bool,
    /// Record per-slot draws and queue states into `SimReport::trace`.
    pub record_trace: bool,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulation horizon must be at least 1 slot")]
    ZeroHorizon,
    #[error("config has no relays")]
    NoRelays,
    #[error("index table {relay} was built for different relay parameters")]
    TableMismatch { relay: usize },
    #[error("unknown on-fail mode {0:?} (expected retry or drop)")]
    UnknownOnFail(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

// ======================================================================
// RNG plan
// ======================================================================

/// Named, mutually independent randomness streams for one run.
///
/// All streams share one ChaCha key derived from the master seed and differ
/// only in the cipher's stream counter, which makes them independent by
/// construction: stream 0 feeds the policy, streams `1 + 2i` / `2 + 2i`
/// feed relay `i`'s first-hop and second-hop channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngPlan {
    pub master_seed: u64,
}

impl RngPlan {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(id);
        rng
    }

    /// Stream that drives policy randomness (uniform picks, tie-breaks).
    pub fn policy_stream(&self) -> ChaCha8Rng {
        self.stream(0)
    }

    /// Stream of relay `i`'s source→relay channel.
    pub fn channel_a(&self, relay: usize) -> ChaCha8Rng {
        self.stream(1 + 2 * relay as u64)
    }

    /// Stream of relay `i`'s relay→destination channel.
    pub fn channel_w(&self, relay: usize) -> ChaCha8Rng {
        self.stream(2 + 2 * relay as u64)
    }
}

// ======================================================================
// Reports
// ======================================================================

/// Per-slot record for replay checks (test-sized runs only).
#[derive(Debug, Clone, PartialEq)]
pub struct SlotTrace {
    pub selected: usize,
    /// First-hop draw per relay (streams advance every slot for every relay).
    pub a: Vec<bool>,
    /// Second-hop draw per relay.
    pub w: Vec<bool>,
    /// Queue lengths after the slot resolved.
    pub queues_end: Vec<u32>,
}

/// Metrics of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    /// Time-average of `Σ c_i · X_i` over slot-start states.
    pub avg_cost: f64,
    /// Mean slots from becoming head-of-source to delivery, over delivered
    /// packets; 0.0 when nothing was delivered.
    pub avg_delay: f64,
    /// Delivered packets per slot.
    pub throughput: f64,
    /// Packets that reached the destination.
    pub delivered: u64,
    /// Time-average queue length per relay.
    pub per_relay_mean_queue: Vec<f64>,
    /// First-hop successes suppressed because the target buffer was full.
    pub drops_suppressed: u64,
    /// Packets still queued at a relay when the horizon ended (these are
    /// excluded from `avg_delay`).
    pub in_flight: u64,
    /// Packets abandoned at the source (`on_fail = drop` only).
    pub abandoned: u64,
    /// Per-slot total cost, when requested.
    pub time_series: Option<Vec<f64>>,
    /// Per-slot draws and states, when requested.
    pub trace: Option<Vec<SlotTrace>>,
}

/// Mean and standard error of one metric across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub stderr: f64,
}

impl MetricStat {
    pub fn from_samples(xs: &[f64]) -> Self {
        let k = xs.len();
        assert!(k > 0, "no samples");
        let mean = xs.iter().sum::<f64>() / k as f64;
        let stderr = if k > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            (var / k as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr }
    }

    /// Standard error of the difference of two independent means.
    pub fn pooled_stderr(&self, other: &MetricStat) -> f64 {
        self.stderr.hypot(other.stderr)
    }
}

/// Across-seed aggregates of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub avg_cost: MetricStat,
    pub avg_delay: MetricStat,
    pub throughput: MetricStat,
    pub delivered: MetricStat,
    pub drops_suppressed: MetricStat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub reports: Vec<SimReport>,
    pub summary: BatchSummary,
}

impl BatchSummary {
    fn from_reports(reports: &[SimReport]) -> Self {
        let collect = |f: fn(&SimReport) -> f64| -> MetricStat {
            MetricStat::from_samples(&reports.iter().map(f).collect::<Vec<f64>>())
        };
        Self {
            avg_cost: collect(|r| r.avg_cost),
            avg_delay: collect(|r| r.avg_delay),
            throughput: collect(|r| r.throughput),
            delivered: collect(|r| r.delivered as f64),
            drops_suppressed: collect(|r| r.drops_suppressed as f64),
        }
    }
}

// ======================================================================
// The slot loop
// ======================================================================

fn check_tables(
    config: &SystemConfig,
    tables: Option<&[IndexTable]>,
) -> Result<(), SimError> {
    if config.policy.needs_tables() {
        let tables = tables.unwrap_or(&[]);
        if tables.len() != config.relays.len() {
            return Err(PolicyError::MissingTables {
                got: tables.len(),
                relays: config.relays.len(),
            }
            .into());
        }
        for (i, (table, relay)) in tables.iter().zip(&config.relays).enumerate() {
            if table.params != *relay {
                return Err(SimError::TableMismatch { relay: i });
            }
        }
    }
    Ok(())
}

/// Simulate one run. `tables` is required (one per relay, matching
/// parameters) when the policy is Whittle, and ignored otherwise.
pub fn run(
    config: &SystemConfig,
    tables: Option<&[IndexTable]>,
    opts: &SimOptions,
) -> Result<SimReport, SimError> {
    if config.relays.is_empty() {
        return Err(SimError::NoRelays);
    }
    if config.horizon == 0 {
        return Err(SimError::ZeroHorizon);
    }
    check_tables(config, tables)?;

    let m = config.relays.len();
    let plan = RngPlan::new(config.seed);
    let mut policy_rng = plan.policy_stream();
    let mut a_rngs: Vec<ChaCha8Rng> = (0..m).map(|i| plan.channel_a(i)).collect();
    let mut w_rngs: Vec<ChaCha8Rng> = (0..m).map(|i| plan.channel_w(i)).collect();

    // Queues hold the head-of-source slot stamp of each packet, so delays
    // can be measured from when the packet first reached the head.
    let mut queues: Vec<VecDeque<u64>> = vec![VecDeque::new(); m];
    let mut lens: Vec<u32> = vec![0; m];
    let mut head_slot: u64 = 0;

    let mut cost_sum = 0.0f64;
    let mut queue_slot_sum = vec![0u64; m];
    let mut entered = 0u64;
    let mut delivered = 0u64;
    let mut delay_sum = 0u64;
    let mut drops_suppressed = 0u64;
    let mut abandoned = 0u64;

    let mut time_series =
        opts.record_time_series.then(|| Vec::with_capacity(config.horizon as usize));
    let mut trace = opts.record_trace.then(|| Vec::with_capacity(config.horizon as usize));
    let mut a_draw = vec![false; m];
    let mut w_draw = vec![false; m];

    for n in 0..config.horizon {
        // Metrics sample the beginning-of-slot state.
        let mut slot_cost = 0.0;
        for i in 0..m {
            slot_cost += config.relays[i].c * f64::from(lens[i]);
            queue_slot_sum[i] += u64::from(lens[i]);
        }
        cost_sum += slot_cost;
        if let Some(ts) = time_series.as_mut() {
            ts.push(slot_cost);
        }

        // Mini-slot 1: transmit the head packet to the selected relay.
        let selected = {
            let mut ctx = policies::PolicyContext {
                slot: n,
                queues: &lens,
                params: &config.relays,
                index_tables: tables,
                rng: &mut policy_rng,
            };
            policies::select(config.policy, &mut ctx)?
        };
        for i in 0..m {
            a_draw[i] = a_rngs[i].gen_bool(config.relays[i].f);
        }
        if a_draw[selected] && lens[selected] < config.relays[selected].k {
            queues[selected].push_back(head_slot);
            lens[selected] += 1;
            entered += 1;
            head_slot = n + 1;
        } else {
            if a_draw[selected] {
                // Channel succeeded but the buffer was full.
                drops_suppressed += 1;
            }
            if opts.on_fail == OnFail::Drop {
                abandoned += 1;
                head_slot = n + 1;
            }
        }

        // Mini-slot 2: every nonempty relay attempts a delivery, including
        // the one that just accepted a packet.
        for i in 0..m {
            w_draw[i] = w_rngs[i].gen_bool(config.relays[i].l);
            if w_draw[i] && lens[i] > 0 {
                let stamp = queues[i].pop_front().expect("nonempty queue");
                lens[i] -= 1;
                delivered += 1;
                delay_sum += n - stamp + 1;
            }
        }

        if let Some(tr) = trace.as_mut() {
            tr.push(SlotTrace {
                selected,
                a: a_draw.clone(),
                w: w_draw.clone(),
                queues_end: lens.clone(),
            });
        }
    }

    let t = config.horizon as f64;
    Ok(SimReport {
        avg_cost: cost_sum / t,
        avg_delay: if delivered > 0 { delay_sum as f64 / delivered as f64 } else { 0.0 },
        throughput: delivered as f64 / t,
        delivered,
        per_relay_mean_queue: queue_slot_sum.iter().map(|&s| s as f64 / t).collect(),
        drops_suppressed,
        in_flight: entered - delivered,
        abandoned,
        time_series,
        trace,
    })
}

/// Run one config under many seeds (in parallel) and aggregate.
///
/// Reports come back in seed order regardless of thread count, so batch
/// output is reproducible for a fixed seed list.
pub fn run_batch(
    config: &SystemConfig,
    tables: Option<&[IndexTable]>,
    seeds: &[u64],
    opts: &SimOptions,
) -> Result<BatchReport, SimError> {
    assert!(!seeds.is_empty(), "no seeds");
    let reports = seeds
        .par_iter()
        .map(|&seed| run(&SystemConfig { seed, ..config.clone() }, tables, opts))
        .collect::<Result<Vec<SimReport>, SimError>>()?;
    let summary = BatchSummary::from_reports(&reports);
    Ok(BatchReport { reports, summary })
}
