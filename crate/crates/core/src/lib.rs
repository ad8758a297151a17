//! Index-based relay selection for a slotted two-hop network.
//!
//! A saturated source forwards packets through one of `M` relays, each a
//! finite FIFO queue with Bernoulli input/output channels and a linear
//! holding cost. Scheduling one relay per slot is a restless bandit; this
//! crate computes each relay's opportunity-cost index in closed form from
//! its single-queue dynamic program and simulates the resulting
//! lowest-index policy against reference heuristics.
//!
//! Module map:
//! - [`model`] — relay parameters and the per-queue transition kernels.
//! - [`solver`] — average-cost evaluation of threshold policies (O(K)
//!   tridiagonal solve), relative value iteration, and the joint-MDP
//!   reference solver.
//! - [`whittle`] — the per-state index: fixed point of the
//!   transmit-vs-idle value gap, tabulated over a state grid.
//! - [`policies`] — relay-selection rules (random, load-based, best-link,
//!   fastest-drain, index-based).
//! - [`sim`] — the slot-level simulator with common-random-number seeding
//!   and multi-seed batches.

pub mod model;
pub mod policies;
pub mod sim;
pub mod solver;
pub mod whittle;

pub use model::{Action, Diagnostic, ModelError, RelayParams, Severity, TransitionRow};
pub use policies::{PolicyError, PolicyKind};
pub use sim::{
    BatchReport, BatchSummary, MetricStat, OnFail, RngPlan, SimError, SimOptions, SimReport,
    SystemConfig,
};
pub use solver::{DpeResidual, JointSolution, SolverError, ValueSolution, JOINT_STATE_LIMIT};
pub use whittle::{IndexMode, IndexTable, WhittleConfig, WhittleError};
