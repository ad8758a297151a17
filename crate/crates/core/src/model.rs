//! Single-relay queue model: parameters, one-slot transition kernel, and
//! configuration diagnostics.
//!
//! A relay holds a FIFO queue with at most `k` packets. In each slot the
//! source may transmit one packet to the relay (action `Active`), which
//! arrives with probability `f`; independently, a nonempty relay delivers its
//! head packet with probability `l`. Both events resolve within the slot, so
//! the queue moves from `x` to `clamp(x + A - W, 0, k)`: an arrival pushed
//! above `k` is suppressed into a self-loop at `k`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-relay model parameters.
///
/// `c` is the per-slot holding cost charged per queued packet; `k` is the
/// buffer size. Serialized field names follow the interchange format used by
/// index-table files (`C`, `K`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelayParams {
    /// Source → relay delivery probability.
    pub f: f64,
    /// Relay → destination delivery probability.
    pub l: f64,
    /// Holding cost per packet per slot.
    #[serde(rename = "C")]
    pub c: f64,
    /// Buffer size (maximum queue length).
    #[serde(rename = "K")]
    pub k: u32,
}

impl RelayParams {
    pub fn new(f: f64, l: f64, c: f64, k: u32) -> Self {
        Self { f, l, c, k }
    }

    /// Load factor of the always-active queue, `f(1-l) / ((1-f)l)`.
    ///
    /// The active chain is a birth–death chain with up-probability `f(1-l)`
    /// and down-probability `(1-f)l`; its stationary distribution is
    /// geometric with this ratio.
    pub fn load_factor(&self) -> f64 {
        self.f * (1.0 - self.l) / ((1.0 - self.f) * self.l)
    }
}

/// Source action toward one relay in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// The source transmits the head packet to this relay.
    Active,
    /// The source leaves this relay alone (it may still deliver downstream).
    Passive,
}

/// One row of a one-slot transition kernel.
///
/// Entries are `(to_state, probability)`, sorted by state, zero-probability
/// outcomes omitted; probabilities sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRow {
    pub from_state: u32,
    pub action: Action,
    pub entries: Vec<(u32, f64)>,
}

impl TransitionRow {
    /// Probability of moving to `state`, 0.0 if absent.
    pub fn prob(&self, state: u32) -> f64 {
        self.entries
            .iter()
            .find(|(s, _)| *s == state)
            .map(|(_, p)| *p)
            .unwrap_or(0.0)
    }

    /// Expected value of `v` under this row: `Σ_z P(z) v[z]`.
    pub fn expectation(&self, v: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(z, p)| p * v[z as usize])
            .sum()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("state {state} out of range for buffer size {k}")]
    StateOutOfRange { state: u32, k: u32 },
}

fn push_nonzero(entries: &mut Vec<(u32, f64)>, state: u32, p: f64) {
    if p > 0.0 {
        entries.push((state, p));
    }
}

/// Transition row when the source transmits to this relay.
///
/// Interior states move down with probability `(1-f)l`, stay with
/// `(1-f)(1-l) + f·l`, and move up with `f(1-l)`; at `x = k` the up-move is
/// folded into the self-loop (the arrival is suppressed), and at `x = 0` the
/// impossible departure folds into the self-loop.
pub fn active_row(x: u32, p: &RelayParams) -> Result<TransitionRow, ModelError> {
    if x > p.k {
        return Err(ModelError::StateOutOfRange { state: x, k: p.k });
    }
    let (f, l) = (p.f, p.l);
    let down = (1.0 - f) * l;
    let hold = (1.0 - f) * (1.0 - l) + f * l;
    let up = f * (1.0 - l);

    let mut entries = Vec::with_capacity(3);
    if x == 0 {
        // (x-1)^+ = 0 folds the down-mass into the self-loop.
        push_nonzero(&mut entries, 0, hold + down);
        if p.k >= 1 {
            push_nonzero(&mut entries, 1, up);
        } else {
            push_nonzero(&mut entries, 0, up);
        }
    } else if x == p.k {
        push_nonzero(&mut entries, x - 1, down);
        push_nonzero(&mut entries, x, hold + up);
    } else {
        push_nonzero(&mut entries, x - 1, down);
        push_nonzero(&mut entries, x, hold);
        push_nonzero(&mut entries, x + 1, up);
    }

    // Merge the k = 0 corner case where both pushes target state 0.
    entries = merge_sorted(entries);
    Ok(TransitionRow { from_state: x, action: Action::Active, entries })
}

/// Transition row when the source does not transmit to this relay.
///
/// A nonempty queue drains one packet with probability `l`; an empty queue
/// is absorbing for the slot.
pub fn passive_row(x: u32, p: &RelayParams) -> Result<TransitionRow, ModelError> {
    if x > p.k {
        return Err(ModelError::StateOutOfRange { state: x, k: p.k });
    }
    let mut entries = Vec::with_capacity(2);
    if x == 0 {
        entries.push((0, 1.0));
    } else {
        push_nonzero(&mut entries, x - 1, p.l);
        push_nonzero(&mut entries, x, 1.0 - p.l);
    }
    Ok(TransitionRow { from_state: x, action: Action::Passive, entries })
}

/// Row for either action.
pub fn row(x: u32, action: Action, p: &RelayParams) -> Result<TransitionRow, ModelError> {
    match action {
        Action::Active => active_row(x, p),
        Action::Passive => passive_row(x, p),
    }
}

fn merge_sorted(mut entries: Vec<(u32, f64)>) -> Vec<(u32, f64)> {
    entries.sort_by_key(|&(s, _)| s);
    let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
    for (s, p) in entries {
        match merged.last_mut() {
            Some((last, q)) if *last == s => *q += p,
            _ => merged.push((s, p)),
        }
    }
    merged
}

// ======================================================================
// Diagnostics
// ======================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Error,
}

/// A validation finding: an invariant violation (`Error`) or an advisory
/// condition (`Warning`). `field` names the offending config entry when one
/// can be pinpointed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub field: Option<String>,
    pub message: String,
}

impl Diagnostic {
    pub fn error(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { severity: Severity::Error, field: Some(field.into()), message: message.into() }
    }

    pub fn warning(message: impl Into<String>) -> Self {
        Self { severity: Severity::Warning, field: None, message: message.into() }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, fmt: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        match &self.field {
            Some(field) => write!(fmt, "{tag}: {field}: {}", self.message),
            None => write!(fmt, "{tag}: {}", self.message),
        }
    }
}

/// Validate relay parameters and a horizon.
///
/// Hard invariants (reported as errors): `0 < f < 1`, `0 < l < 1`, `c > 0`,
/// `k ≥ 1` for every relay; at least one relay; `horizon ≥ 1`.
///
/// The queue-stability sufficient condition `min_i l_i > max_i f_i` is
/// advisory only: violating it means some relay can be driven unstable, which
/// is a legitimate operating point, so it yields a warning, never an error.
pub fn validate(relays: &[RelayParams], horizon: u64) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if relays.is_empty() {
        out.push(Diagnostic::error("relays", "at least one relay is required"));
    }
    if horizon == 0 {
        out.push(Diagnostic::error("T", "horizon must be at least 1 slot"));
    }
    for (i, r) in relays.iter().enumerate() {
        if !(r.f > 0.0 && r.f < 1.0) {
            out.push(Diagnostic::error(
                format!("relays[{i}].f"),
                format!("delivery probability must lie strictly in (0,1), got {}", r.f),
            ));
        }
        if !(r.l > 0.0 && r.l < 1.0) {
            out.push(Diagnostic::error(
                format!("relays[{i}].l"),
                format!("delivery probability must lie strictly in (0,1), got {}", r.l),
            ));
        }
        if !(r.c > 0.0) {
            out.push(Diagnostic::error(
                format!("relays[{i}].C"),
                format!("holding cost must be positive, got {}", r.c),
            ));
        }
        if r.k < 1 {
            out.push(Diagnostic::error(format!("relays[{i}].K"), "buffer size must be at least 1"));
        }
    }
    if !relays.is_empty() {
        let min_l = relays.iter().map(|r| r.l).fold(f64::INFINITY, f64::min);
        let max_f = relays.iter().map(|r| r.f).fold(f64::NEG_INFINITY, f64::max);
        if min_l <= max_f {
            out.push(Diagnostic::warning(format!(
                "stability condition min(l) > max(f) violated (min l = {min_l}, max f = {max_f}); \
                 queues may grow to the buffer limit"
            )));
        }
    }
    out
}
