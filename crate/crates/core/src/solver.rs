//! Average-cost solvers for the single-relay queue and the joint
//! multi-relay problem.
//!
//! For a fixed passivity tax `λ` and a threshold policy ("transmit while the
//! queue is at or below the threshold"), the relative values `V` and the
//! average cost `σ` satisfy a linear system: one balance equation per state
//! plus the normalization `V(0) = 0`. The system is tridiagonal in `V` with
//! one extra dense column for `σ`, so it is solved in O(K) by a pair of
//! Thomas eliminations (`V = Va + σ·Vb`) closed by the state-0 equation.
//!
//! `relative_value_iteration` solves the *optimal* dynamic-programming
//! equation (minimum over transmit/idle per state) by successive
//! approximation with span-seminorm stopping; it serves as an independent
//! cross-check of the linear path and induces the greedy threshold.
//! `solve_joint_optimal` runs the same iteration on the exact joint MDP
//! (one active relay per slot) for small instances.

use crate::model::{self, Action, ModelError, RelayParams};
use thiserror::Error;

/// Default span tolerance for value iteration.
pub const RVI_DEFAULT_TOL: f64 = 1e-10;
/// Default iteration budget for value iteration.
pub const RVI_DEFAULT_MAX_ITER: u64 = 1_000_000;
/// Largest joint state space `solve_joint_optimal` accepts.
pub const JOINT_STATE_LIMIT: usize = 25_000;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("threshold {threshold} outside [-1, {k}]")]
    InvalidThreshold { threshold: i64, k: u32 },
    /// A pivot cancelled below double-precision noise. Raised for systems
    /// whose conditioning exceeds what f64 can resolve — in practice long
    /// transmit runs on an up-drift chain (`f(1-l) > (1-f)l`); see the
    /// numeric-domain note on [`solve_threshold_system`].
    #[error("linear system is numerically singular at equation {equation}")]
    Singular { equation: usize },
    #[error("value iteration did not converge: span {span:.3e} after {iterations} iterations")]
    NoConvergence { iterations: u64, span: f64 },
    #[error("joint state space has {states} states, above the limit of {limit}")]
    StateSpaceTooLarge { states: usize, limit: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Relative values and average cost for one relay at one tax level.
///
/// `v` has `k+1` entries with `v[0] == 0`. `threshold` is the last state at
/// which the policy transmits: `-1` means never (all-passive), `k` means
/// always. For solutions from `relative_value_iteration` the threshold is
/// the one induced by the converged greedy policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSolution {
    pub lambda: f64,
    pub threshold: i64,
    pub v: Vec<f64>,
    pub sigma: f64,
}

impl ValueSolution {
    /// Largest gap between consecutive states where the value function
    /// decreases by more than `tol` — `None` when `v` is (numerically)
    /// nondecreasing, as it should be for a holding-cost chain.
    pub fn monotonicity_violation(&self, tol: f64) -> Option<(u32, f64)> {
        self.v
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] < w[0] - tol)
            .map(|(y, w)| (y as u32 + 1, w[0] - w[1]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn policy_action(y: u32, threshold: i64) -> Action {
    if i64::from(y) <= threshold {
        Action::Active
    } else {
        Action::Passive
    }
}

/// Solve the balance equations of a threshold policy at tax `lambda`.
///
/// States at or below `threshold` use the transmit row and pay `c·y` per
/// slot; states above it use the idle row and pay `c·y + λ`. Normalized by
/// `V(0) = 0`. Runs in O(k) time and memory.
///
/// # Numeric domain
///
/// The elimination is accurate in the drain-dominant regime (`l > f`,
/// where the transmit chain drifts down). When the transmit chain drifts
/// up (`f(1-l) > (1-f)l`) a run of `n` consecutive transmit states
/// conditions the system like `(up/down)^n`: beyond roughly 16 decades
/// the pivot under the first idle state cancels below f64 noise and no
/// double-precision method can recover the solution. Such systems are
/// reported as [`SolverError::Singular`] rather than solved to garbage.
pub fn solve_threshold_system(
    p: &RelayParams,
    lambda: f64,
    threshold: i64,
) -> Result<ValueSolution, SolverError> {
    let k = p.k;
    if threshold < -1 || threshold > i64::from(k) {
        return Err(SolverError::InvalidThreshold { threshold, k });
    }
    let m = k as usize; // unknowns V(1..=k)

    // Row coefficients of (I - P) for equations at states 1..=k, taken from
    // the kernel module so the solver and the simulator share one kernel.
    let mut sub = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut sup = vec![0.0; m];
    let mut rhs = vec![0.0; m]; // Va solve
    let mut rhs_sigma = vec![-1.0; m]; // Vb solve: the σ column moved right
    for j in 0..m {
        let y = j as u32 + 1;
        let row = model::row(y, policy_action(y, threshold), p)?;
        sub[j] = -row.prob(y - 1);
        diag[j] = 1.0 - row.prob(y);
        if y < k {
            sup[j] = -row.prob(y + 1);
        }
        rhs[j] = p.c * f64::from(y)
            + if i64::from(y) > threshold { lambda } else { 0.0 };
    }

    // Thomas elimination with two right-hand sides. The pivot guard is
    // relative to the terms that form it: when the subtraction cancels to
    // within ~1e-13 of its operands the remaining digits are rounding
    // noise and the downstream solve would be garbage, so fail instead.
    // Drain-dominant chains keep pivots O(1) relative and never trip this.
    let mut coef = vec![0.0; m];
    for j in 0..m {
        let (w, scale) = if j == 0 {
            (diag[0], diag[0].abs())
        } else {
            let fill = sub[j] * coef[j - 1];
            (diag[j] - fill, diag[j].abs() + fill.abs())
        };
        if w.abs() <= 1e-13 * scale {
            return Err(SolverError::Singular { equation: j + 1 });
        }
        coef[j] = sup[j] / w;
        let prev_a = if j == 0 { 0.0 } else { rhs[j - 1] };
        let prev_b = if j == 0 { 0.0 } else { rhs_sigma[j - 1] };
        rhs[j] = (rhs[j] - sub[j] * prev_a) / w;
        rhs_sigma[j] = (rhs_sigma[j] - sub[j] * prev_b) / w;
    }
    for j in (0..m.saturating_sub(1)).rev() {
        rhs[j] -= coef[j] * rhs[j + 1];
        rhs_sigma[j] -= coef[j] * rhs_sigma[j + 1];
    }
    let (va, vb) = (rhs, rhs_sigma);

    // Close with the state-0 equation. Passive state 0 is a self-loop, so
    // the equation collapses to σ = λ; active state 0 reads σ = P(0→1)·V(1).
    let sigma = if threshold >= 0 {
        let up0 = model::active_row(0, p)?.prob(1);
        let fill = up0 * vb.first().copied().unwrap_or(0.0);
        let denom = 1.0 - fill;
        if denom.abs() <= 1e-13 * (1.0 + fill.abs()) {
            return Err(SolverError::Singular { equation: 0 });
        }
        up0 * va.first().copied().unwrap_or(0.0) / denom
    } else {
        lambda
    };

    let mut v = Vec::with_capacity(m + 1);
    v.push(0.0);
    for j in 0..m {
        v.push(va[j] + sigma * vb[j]);
    }
    Ok(ValueSolution { lambda, threshold, v, sigma })
}

/// Max absolute residual of the solution in its own defining equations
/// (fixed threshold policy, no minimization).
pub fn plugback_residual(p: &RelayParams, sol: &ValueSolution) -> Result<f64, SolverError> {
    let mut worst = 0.0f64;
    for y in 0..=p.k {
        let action = policy_action(y, sol.threshold);
        let row = model::row(y, action, p)?;
        let tax = if matches!(action, Action::Passive) { sol.lambda } else { 0.0 };
        let expected = p.c * f64::from(y) + tax - sol.sigma + row.expectation(&sol.v);
        worst = worst.max((sol.v[y as usize] - expected).abs());
    }
    Ok(worst)
}

/// Worst-state violation of the optimal dynamic-programming equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpeResidual {
    pub max_abs: f64,
    /// State where the max was attained.
    pub state: u32,
}

/// Max absolute residual of the solution in the *optimal* dynamic-programming
/// equation: `V(y) = c·y − σ + min(transmit branch, λ + idle branch)`.
///
/// Small only when the solution's threshold policy is actually greedy-optimal
/// at its `λ`; a wrong threshold shows up as a large residual at the states
/// where the wrong branch was used.
pub fn dpe_residual(p: &RelayParams, sol: &ValueSolution) -> Result<DpeResidual, SolverError> {
    let mut worst = DpeResidual { max_abs: 0.0, state: 0 };
    for y in 0..=p.k {
        let qa = model::active_row(y, p)?.expectation(&sol.v);
        let qp = sol.lambda + model::passive_row(y, p)?.expectation(&sol.v);
        let expected = p.c * f64::from(y) - sol.sigma + qa.min(qp);
        let here = (sol.v[y as usize] - expected).abs();
        if here > worst.max_abs {
            worst = DpeResidual { max_abs: here, state: y };
        }
    }
    Ok(worst)
}

/// Difference between the two branch values of the dynamic-programming
/// equation at state `x`: `E_transmit[V](x) − (λ + E_idle[V](x))`.
///
/// Zero exactly when the controller is indifferent at `x`.
pub fn branch_gap(p: &RelayParams, sol: &ValueSolution, x: u32) -> Result<f64, SolverError> {
    let qa = model::active_row(x, p)?.expectation(&sol.v);
    let qp = sol.lambda + model::passive_row(x, p)?.expectation(&sol.v);
    Ok(qa - qp)
}

// ======================================================================
// Relative value iteration (independent of the linear path)
// ======================================================================

/// Kernel rows flattened to (down, stay, up) triples for fast sweeps.
struct FlatKernel {
    active: Vec<[f64; 3]>,
    passive: Vec<[f64; 3]>,
}

impl FlatKernel {
    fn build(p: &RelayParams) -> Result<Self, SolverError> {
        let mut active = Vec::with_capacity(p.k as usize + 1);
        let mut passive = Vec::with_capacity(p.k as usize + 1);
        for y in 0..=p.k {
            let a = model::active_row(y, p)?;
            let q = model::passive_row(y, p)?;
            let down = |r: &model::TransitionRow| if y > 0 { r.prob(y - 1) } else { 0.0 };
            let up = |r: &model::TransitionRow| if y < p.k { r.prob(y + 1) } else { 0.0 };
            active.push([down(&a), a.prob(y), up(&a)]);
            passive.push([down(&q), q.prob(y), up(&q)]);
        }
        Ok(Self { active, passive })
    }

    #[inline]
    fn expect(row: &[f64; 3], v: &[f64], y: usize) -> f64 {
        let down = if y > 0 { row[0] * v[y - 1] } else { 0.0 };
        let up = if y + 1 < v.len() { row[2] * v[y + 1] } else { 0.0 };
        down + row[1] * v[y] + up
    }
}

/// Solve the optimal dynamic-programming equation at tax `lambda` by
/// relative value iteration with span-seminorm stopping.
///
/// Returns the converged `(V, σ)` (normalized to `V(0) = 0`) together with
/// the threshold induced by the greedy policy. Errors with `NoConvergence`
/// when the span has not dropped below `tol` within `max_iter` sweeps.
pub fn relative_value_iteration(
    p: &RelayParams,
    lambda: f64,
    tol: f64,
    max_iter: u64,
) -> Result<ValueSolution, SolverError> {
    let kernel = FlatKernel::build(p)?;
    let n = p.k as usize + 1;
    let mut v = vec![0.0; n];
    let mut tv = vec![0.0; n];
    let mut iterations = 0u64;
    let mut span = f64::INFINITY;

    while iterations < max_iter {
        iterations += 1;
        for y in 0..n {
            let hold = p.c * y as f64;
            let qa = hold + FlatKernel::expect(&kernel.active[y], &v, y);
            let qp = hold + lambda + FlatKernel::expect(&kernel.passive[y], &v, y);
            tv[y] = qa.min(qp);
        }
        let sigma_est = tv[0];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for y in 0..n {
            let next = tv[y] - sigma_est;
            let delta = next - v[y];
            lo = lo.min(delta);
            hi = hi.max(delta);
            v[y] = next;
        }
        span = hi - lo;
        if span < tol {
            let threshold = induced_threshold(p, &kernel, &v, lambda);
            return Ok(ValueSolution { lambda, threshold, v, sigma: sigma_est });
        }
    }
    Err(SolverError::NoConvergence { iterations, span })
}

/// Threshold of the greedy policy for value vector `v`: last state of the
/// leading transmit prefix (ties break toward transmitting).
fn induced_threshold(p: &RelayParams, kernel: &FlatKernel, v: &[f64], lambda: f64) -> i64 {
    for y in 0..v.len() {
        let qa = FlatKernel::expect(&kernel.active[y], v, y);
        let qp = lambda + FlatKernel::expect(&kernel.passive[y], v, y);
        if qa > qp {
            return y as i64 - 1;
        }
    }
    i64::from(p.k)
}

// ======================================================================
// Joint problem (exact, small instances)
// ======================================================================

/// Optimal solution of the joint problem: every slot exactly one relay is
/// transmitted to, cost is the sum of per-relay holding costs.
#[derive(Debug, Clone)]
pub struct JointSolution {
    /// Optimal long-run average cost.
    pub sigma: f64,
    /// Relative values per joint state, normalized to the all-empty state.
    pub v: Vec<f64>,
    /// Greedy choice of relay per joint state (ties broke to lowest id).
    pub policy: Vec<u8>,
    dims: Vec<usize>,
}

impl JointSolution {
    /// Flat index of the joint state `xs` (one queue length per relay).
    pub fn state_index(&self, xs: &[u32]) -> usize {
        assert_eq!(xs.len(), self.dims.len());
        xs.iter()
            .zip(&self.dims)
            .fold(0usize, |acc, (&x, &d)| acc * d + x as usize)
    }
}

/// Per-relay rows for every local state and both actions.
struct JointKernel {
    /// `rows[i][x]` = (active entries, passive entries) as `(next, prob)`.
    rows: Vec<Vec<(Vec<(u32, f64)>, Vec<(u32, f64)>)>>,
    dims: Vec<usize>,
    costs: Vec<Vec<f64>>,
}

impl JointKernel {
    fn build(relays: &[RelayParams]) -> Result<Self, SolverError> {
        let mut rows = Vec::with_capacity(relays.len());
        let mut dims = Vec::with_capacity(relays.len());
        let mut costs = Vec::with_capacity(relays.len());
        for p in relays {
            let mut per_state = Vec::with_capacity(p.k as usize + 1);
            for x in 0..=p.k {
                per_state.push((
                    model::active_row(x, p)?.entries,
                    model::passive_row(x, p)?.entries,
                ));
            }
            rows.push(per_state);
            dims.push(p.k as usize + 1);
            costs.push((0..=p.k).map(|x| p.c * f64::from(x)).collect());
        }
        Ok(Self { rows, dims, costs })
    }

    /// `Σ_next P(next | state, action) · v[next]` over the product chain,
    /// where `action` transmits to relay `a` only.
    fn action_expectation(&self, v: &[f64], xs: &[u32], a: usize) -> f64 {
        fn recurse(
            kernel: &JointKernel,
            v: &[f64],
            xs: &[u32],
            a: usize,
            relay: usize,
            idx: usize,
            prob: f64,
        ) -> f64 {
            if relay == xs.len() {
                return prob * v[idx];
            }
            let (active, passive) = &kernel.rows[relay][xs[relay] as usize];
            let entries = if relay == a { active } else { passive };
            let mut acc = 0.0;
            for &(next, p) in entries {
                acc += recurse(
                    kernel,
                    v,
                    xs,
                    a,
                    relay + 1,
                    idx * kernel.dims[relay] + next as usize,
                    prob * p,
                );
            }
            acc
        }
        recurse(self, v, xs, a, 0, 0, 1.0)
    }
}

/// Exact optimal average cost of the joint problem by relative value
/// iteration over the product state space.
///
/// Intended as a small-instance reference: refuses joint state spaces above
/// [`JOINT_STATE_LIMIT`].
pub fn solve_joint_optimal(
    relays: &[RelayParams],
    tol: f64,
    max_iter: u64,
) -> Result<JointSolution, SolverError> {
    assert!(!relays.is_empty(), "joint solve needs at least one relay");
    let kernel = JointKernel::build(relays)?;
    let states: usize = kernel.dims.iter().product();
    if states > JOINT_STATE_LIMIT {
        return Err(SolverError::StateSpaceTooLarge { states, limit: JOINT_STATE_LIMIT });
    }
    let m = relays.len();

    // Decode every flat index once.
    let mut decoded = vec![vec![0u32; m]; states];
    for (s, xs) in decoded.iter_mut().enumerate() {
        let mut rem = s;
        for i in (0..m).rev() {
            xs[i] = (rem % kernel.dims[i]) as u32;
            rem /= kernel.dims[i];
        }
    }
    let cost: Vec<f64> = decoded
        .iter()
        .map(|xs| xs.iter().enumerate().map(|(i, &x)| kernel.costs[i][x as usize]).sum())
        .collect();

    let mut v = vec![0.0; states];
    let mut tv = vec![0.0; states];
    let mut iterations = 0u64;
    let mut span = f64::INFINITY;
    while iterations < max_iter {
        iterations += 1;
        for s in 0..states {
            let mut best = f64::INFINITY;
            for a in 0..m {
                best = best.min(kernel.action_expectation(&v, &decoded[s], a));
            }
            tv[s] = cost[s] + best;
        }
        let sigma_est = tv[0];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in 0..states {
            let next = tv[s] - sigma_est;
            let delta = next - v[s];
            lo = lo.min(delta);
            hi = hi.max(delta);
            v[s] = next;
        }
        span = hi - lo;
        if span < tol {
            let policy = decoded
                .iter()
                .map(|xs| {
                    (0..m)
                        .min_by(|&a, &b| {
                            kernel
                                .action_expectation(&v, xs, a)
                                .total_cmp(&kernel.action_expectation(&v, xs, b))
                        })
                        .unwrap() as u8
                })
                .collect();
            return Ok(JointSolution { sigma: sigma_est, v, policy, dims: kernel.dims });
        }
    }
    Err(SolverError::NoConvergence { iterations, span })
}

/// Expected next-step value `Σ P(·|xs, transmit to a) · v` for an existing
/// joint solution — exposed so tests can compare action values (e.g. for
/// symmetry/tie checks).
pub fn joint_action_value(
    relays: &[RelayParams],
    sol: &JointSolution,
    xs: &[u32],
    a: usize,
) -> Result<f64, SolverError> {
    let kernel = JointKernel::build(relays)?;
    Ok(kernel.action_expectation(&sol.v, xs, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn relay(f: f64, l: f64, c: f64, k: u32) -> RelayParams {
        RelayParams::new(f, l, c, k)
    }

    /// Stationary-mean oracle for the always-transmit chain: the truncated
    /// birth–death chain satisfies detailed balance with ratio
    /// ρ = f(1-l)/((1-f)l), so π(x) ∝ ρ^x on 0..=k.
    fn stationary_mean_always_active(p: &RelayParams) -> f64 {
        let rho = p.load_factor();
        let mut weight = 1.0;
        let mut total = 0.0;
        let mut mean = 0.0;
        for x in 0..=p.k {
            total += weight;
            mean += f64::from(x) * weight;
            weight *= rho;
        }
        mean / total
    }

    #[test]
    fn all_active_sigma_matches_stationary_mean_small_chain() {
        let p = relay(0.3, 0.6, 1.0, 2);
        let sol = solve_threshold_system(&p, 0.0, 2).unwrap();
        // π ∝ (1, 2/7, 4/49) gives E[X] = 22/67.
        assert_abs_diff_eq!(sol.sigma, 22.0 / 67.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.sigma, stationary_mean_always_active(&p), epsilon = 1e-12);
        assert_eq!(sol.v[0], 0.0);
    }

    #[test]
    fn all_active_sigma_matches_stationary_mean_large_chain() {
        let p = relay(0.45, 0.7, 3.0, 40);
        let sol = solve_threshold_system(&p, 7.0, 40).unwrap();
        assert_abs_diff_eq!(sol.sigma, 3.0 * stationary_mean_always_active(&p), epsilon = 1e-10);
    }

    #[test]
    fn all_passive_drains_to_zero_cost_and_first_passage_values() {
        let p = relay(0.3, 0.6, 2.0, 12);
        let sol = solve_threshold_system(&p, 0.0, -1).unwrap();
        // The idle chain absorbs at 0 where both holding cost and tax vanish.
        assert_abs_diff_eq!(sol.sigma, 0.0, epsilon = 1e-14);
        assert_eq!(sol.v[0], 0.0);
        // Independent closed form: draining y packets at rate l costs
        // Σ_{j≤y} c·j/l = c·y(y+1)/(2l) in expectation.
        for y in 0..=12u32 {
            let want = p.c * f64::from(y) * f64::from(y + 1) / (2.0 * p.l);
            assert_abs_diff_eq!(sol.v[y as usize], want, epsilon = 1e-9);
        }
        assert!(plugback_residual(&p, &sol).unwrap() <= 1e-10);
    }

    #[test]
    fn all_passive_average_cost_equals_tax() {
        let p = relay(0.3, 0.6, 2.0, 12);
        let sol = solve_threshold_system(&p, 4.25, -1).unwrap();
        assert_eq!(sol.sigma, 4.25);
    }

    #[test]
    fn interior_threshold_solution_satisfies_its_equations() {
        let p = relay(0.3, 0.6, 1.0, 50);
        let sol = solve_threshold_system(&p, 5.0, 10).unwrap();
        assert!(plugback_residual(&p, &sol).unwrap() <= 1e-10);
        assert_eq!(sol.v[0], 0.0);
        assert!(sol.monotonicity_violation(1e-9).is_none());
    }

    #[test]
    fn threshold_out_of_range_is_rejected() {
        let p = relay(0.3, 0.6, 1.0, 10);
        assert!(matches!(
            solve_threshold_system(&p, 0.0, -2),
            Err(SolverError::InvalidThreshold { .. })
        ));
        assert!(matches!(
            solve_threshold_system(&p, 0.0, 11),
            Err(SolverError::InvalidThreshold { .. })
        ));
    }

    #[test]
    fn saturated_up_drift_run_errors_instead_of_returning_garbage() {
        // Transmit chain with up/down ≈ 47: eleven consecutive transmit
        // states condition the system like 47^11 ≈ 2e18, beyond f64. The
        // pivot under the first idle state cancels to rounding crumbs; the
        // guard must reject the solve (an absolute-only guard let this
        // instance through with V ≡ 0 and a plug-back residual near 49).
        let p = relay(0.9099166437026512, 0.17713693871723157, 0.1, 11);
        assert!(matches!(
            solve_threshold_system(&p, 0.5, 11),
            Err(SolverError::Singular { .. })
        ));
        // A short transmit run on the same relay stays well conditioned.
        let sol = solve_threshold_system(&p, 0.5, 2).unwrap();
        assert!(plugback_residual(&p, &sol).unwrap() <= 1e-10);
    }

    #[test]
    fn sigma_is_affine_in_lambda_at_fixed_threshold() {
        let p = relay(0.25, 0.65, 60.0, 30);
        let sig = |lambda: f64| solve_threshold_system(&p, lambda, 7).unwrap().sigma;
        let (s0, s1, s2) = (sig(0.0), sig(4.0), sig(8.0));
        // Three-point collinearity: midpoint matches the endpoint average.
        assert_abs_diff_eq!(s1, (s0 + s2) / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn rvi_goes_all_passive_when_idling_is_free() {
        let p = relay(0.3, 0.6, 1.0, 20);
        let sol = relative_value_iteration(&p, 0.0, 1e-10, 1_000_000).unwrap();
        assert_eq!(sol.threshold, -1);
        assert_abs_diff_eq!(sol.sigma, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn rvi_goes_all_active_under_a_crushing_tax() {
        let p = relay(0.3, 0.6, 1.0, 20);
        let sol = relative_value_iteration(&p, 1e6, 1e-10, 1_000_000).unwrap();
        assert_eq!(sol.threshold, 20);
    }

    #[test]
    fn rvi_agrees_with_linear_solve_at_induced_threshold() {
        let p = relay(0.3, 0.6, 1.0, 20);
        let rvi = relative_value_iteration(&p, 3.0, 1e-12, 1_000_000).unwrap();
        let lin = solve_threshold_system(&p, 3.0, rvi.threshold).unwrap();
        assert_abs_diff_eq!(rvi.sigma, lin.sigma, epsilon = 1e-8);
        for y in 0..=20usize {
            assert_abs_diff_eq!(rvi.v[y], lin.v[y], epsilon = 1e-6);
        }
    }

    #[test]
    fn rvi_reports_nonconvergence_when_starved() {
        let p = relay(0.3, 0.6, 1.0, 20);
        assert!(matches!(
            relative_value_iteration(&p, 3.0, 1e-12, 2),
            Err(SolverError::NoConvergence { iterations: 2, .. })
        ));
    }

    #[test]
    fn greedy_threshold_is_nondecreasing_in_lambda() {
        let p = relay(0.3, 0.6, 1.0, 20);
        let mut last = -1i64;
        for step in 0..=40 {
            let lambda = 0.25 * f64::from(step) * 10.0; // 0 .. 100
            let sol = relative_value_iteration(&p, lambda, 1e-10, 1_000_000).unwrap();
            assert!(
                sol.threshold >= last,
                "threshold dropped from {last} to {} at λ={lambda}",
                sol.threshold
            );
            last = sol.threshold;
        }
    }

    #[test]
    fn dpe_residual_separates_right_and_wrong_thresholds() {
        // λ is kept small enough that the optimal policy is a pure
        // threshold rule. For large taxes the capped chain prefers to
        // transmit at the buffer-cap state K while idling just below it —
        // a non-threshold optimum, so no threshold solution could satisfy
        // the equation there (the residual localizes at state K).
        let p = relay(0.3, 0.6, 1.0, 20);
        let lambda = 5.0;
        let opt = relative_value_iteration(&p, lambda, 1e-12, 1_000_000).unwrap();
        let t = opt.threshold;
        assert!((1..19).contains(&t), "want an interior threshold, got {t}");

        let right = solve_threshold_system(&p, lambda, t).unwrap();
        assert!(dpe_residual(&p, &right).unwrap().max_abs <= 1e-8);
        for wrong_t in [t - 2, t + 2] {
            let wrong = solve_threshold_system(&p, lambda, wrong_t).unwrap();
            assert!(
                dpe_residual(&p, &wrong).unwrap().max_abs > 1e-6,
                "threshold {wrong_t} should violate the optimality equation"
            );
        }
    }

    #[test]
    fn dpe_residual_flags_forced_idling_under_a_large_tax() {
        // With a +1000 tax on idling, transmitting is strictly better in
        // every state, so the all-passive solution badly violates the DPE...
        let p = relay(0.3, 0.6, 1.0, 10);
        let forced_idle = solve_threshold_system(&p, 1e3, -1).unwrap();
        assert!(dpe_residual(&p, &forced_idle).unwrap().max_abs > 1e2);
        // ...while with a -1000 tax (an idling subsidy) all-passive is
        // exactly optimal and the residual collapses.
        let subsidized = solve_threshold_system(&p, -1e3, -1).unwrap();
        assert!(dpe_residual(&p, &subsidized).unwrap().max_abs <= 1e-9);
    }

    #[test]
    fn joint_single_relay_reduces_to_always_transmit() {
        let p = relay(0.3, 0.6, 1.0, 8);
        let joint = solve_joint_optimal(&[p], 1e-11, 1_000_000).unwrap();
        let single = solve_threshold_system(&p, 0.0, 8).unwrap();
        assert_abs_diff_eq!(joint.sigma, single.sigma, epsilon = 1e-8);
        assert!(joint.policy.iter().all(|&a| a == 0));
    }

    #[test]
    fn joint_symmetric_pair_has_symmetric_policy() {
        let p = relay(0.2, 0.65, 60.0, 6);
        let relays = [p, p];
        let sol = solve_joint_optimal(&relays, 1e-11, 1_000_000).unwrap();
        for x1 in 0..=6u32 {
            for x2 in 0..=6u32 {
                let a = sol.policy[sol.state_index(&[x1, x2])] as usize;
                let b = sol.policy[sol.state_index(&[x2, x1])] as usize;
                if a != 1 - b {
                    // Mirrored states may disagree only at an exact tie.
                    let qa = joint_action_value(&relays, &sol, &[x2, x1], 1 - a).unwrap();
                    let qb = joint_action_value(&relays, &sol, &[x2, x1], b).unwrap();
                    assert_abs_diff_eq!(qa, qb, epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn joint_refuses_oversized_state_spaces() {
        let p = relay(0.2, 0.65, 60.0, 200);
        assert!(matches!(
            solve_joint_optimal(&[p, p], 1e-9, 1_000_000),
            Err(SolverError::StateSpaceTooLarge { states: 40_401, .. })
        ));
    }
}
