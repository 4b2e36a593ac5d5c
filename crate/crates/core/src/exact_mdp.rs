//! The full average-cost MDP over augmented states and its exact policy
//! iteration.
//!
//! Besides the call states `(j, B)` the chain carries zero-cost "completion"
//! states `(∅, B)` so that every service completion is a transition of its
//! own. Each transition is the winner of an exponential race between the
//! next call and the busy units' completions, which is why the per-transition
//! average cost is half the cost per call-completion pair. [`ValueTable`]
//! stores that pair cost `mu`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::instance::{BusyMask, Instance, Policy};
use crate::linalg::solve_dense;
use crate::trace::TraceRow;

/// Largest augmented state space the dense solver accepts by default.
pub const DENSE_STATE_LIMIT: usize = 4096;

/// Tolerance on the max-norm Bellman residual of an evaluation.
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;

/// A call at a node (or no call) together with the busy mask seen at that
/// moment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AugmentedState {
    pub call: Option<usize>,
    pub mask: BusyMask,
}

impl AugmentedState {
    pub fn call(node: usize, mask: BusyMask) -> Self {
        AugmentedState { call: Some(node), mask }
    }

    pub fn completion(mask: BusyMask) -> Self {
        AugmentedState { call: None, mask }
    }

    /// The all-idle completion state; values are pinned to zero there.
    pub const ANCHOR: AugmentedState = AugmentedState {
        call: None,
        mask: BusyMask::EMPTY,
    };

    /// Dense index: `slot * 2^N + mask`, slot 0 for no call and `j + 1` for
    /// a call at node `j`.
    pub fn index(self, units: usize) -> usize {
        let slot = self.call.map_or(0, |j| j + 1);
        (slot << units) + self.mask.index()
    }

    pub fn from_index(index: usize, units: usize) -> Self {
        let slot = index >> units;
        AugmentedState {
            call: slot.checked_sub(1),
            mask: BusyMask((index & ((1 << units) - 1)) as u32),
        }
    }
}

/// Number of augmented states, `(J + 1) * 2^N`.
pub fn state_count(inst: &Instance) -> usize {
    (inst.nodes() + 1) << inst.units()
}

/// All augmented states in index order.
pub fn states(inst: &Instance) -> impl Iterator<Item = AugmentedState> + '_ {
    (0..state_count(inst)).map(|i| AugmentedState::from_index(i, inst.units()))
}

/// Whether `state` requires a dispatch decision.
pub fn is_decision_state(inst: &Instance, state: AugmentedState) -> bool {
    state.call.is_some() && !state.mask.is_full(inst.units())
}

fn check_action(inst: &Instance, state: AugmentedState, action: Option<usize>) -> Result<()> {
    match (is_decision_state(inst, state), action) {
        (true, Some(unit)) if unit < inst.units() && !state.mask.is_busy(unit) => Ok(()),
        (false, None) => Ok(()),
        (true, _) => Err(Error::InfeasibleAction(format!(
            "state {state:?} needs a free unit, got {action:?}"
        ))),
        (false, Some(_)) => Err(Error::InfeasibleAction(format!("state {state:?} takes no action"))),
    }
}

/// One-step cost: the response time of the dispatched unit, zero when no
/// unit is sent (no call, or every unit busy).
pub fn state_cost(inst: &Instance, state: AugmentedState, action: Option<usize>) -> Result<f64> {
    check_action(inst, state, action)?;
    Ok(match (state.call, action) {
        (Some(node), Some(unit)) => inst.response_time(unit, node),
        _ => 0.0,
    })
}

/// Sparse transition row `(successor index, probability)`.
///
/// After the optional dispatch the post-decision mask `B'` races the next
/// call (rate `lambda_j'` per node) against completions of its busy units
/// (rate `mu_l`).
pub fn transition_probs(inst: &Instance, state: AugmentedState, action: Option<usize>) -> Result<Vec<(usize, f64)>> {
    check_action(inst, state, action)?;
    let after = match action {
        Some(unit) => state.mask.with(unit),
        None => state.mask,
    };
    Ok(race_row(inst, after))
}

fn race_row(inst: &Instance, after: BusyMask) -> Vec<(usize, f64)> {
    let units = inst.units();
    let rate = inst.event_rate(after);
    let mut row = Vec::with_capacity(inst.nodes() + after.busy_count());
    for (node, &lambda) in inst.arrival_rates().iter().enumerate() {
        row.push((AugmentedState::call(node, after).index(units), lambda / rate));
    }
    for unit in after.busy_units() {
        let next = AugmentedState::completion(after.without(unit));
        row.push((next.index(units), inst.service_rate(unit) / rate));
    }
    row
}

fn policy_action(policy: &Policy, state: AugmentedState) -> Option<usize> {
    state.call.and_then(|node| policy.action(node, state.mask))
}

/// Differential values over the augmented states plus the average cost.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    pub values: Vec<f64>,
    /// Average cost per call-completion pair; half of it is paid per
    /// transition.
    pub mu: f64,
    units: usize,
}

impl ValueTable {
    pub fn value(&self, state: AugmentedState) -> f64 {
        self.values[state.index(self.units)]
    }

    pub fn units(&self) -> usize {
        self.units
    }

    /// Another member of the solution family, all values moved by `m`.
    pub fn shifted(&self, m: f64) -> ValueTable {
        ValueTable {
            values: self.values.iter().map(|v| v + m).collect(),
            ..self.clone()
        }
    }
}

fn check_budget(inst: &Instance, limit: usize) -> Result<usize> {
    let n = state_count(inst);
    if n > limit {
        return Err(Error::Guard(format!(
            "the full model has (J+1)*2^N = {n} states, above the dense limit of {limit}; \
             use the post-decision solver or TD learning instead"
        )));
    }
    Ok(n)
}

/// Exact evaluation of `policy` with the default state budget.
pub fn evaluate_policy_exact(inst: &Instance, policy: &Policy) -> Result<ValueTable> {
    evaluate_policy_exact_with_limit(inst, policy, DENSE_STATE_LIMIT)
}

/// Solves `V = c - mu/2 e + P V` with `V(anchor) = 0`.
///
/// The anchor's column of `I - P` is replaced by the coefficient of the
/// unknown `mu`, which keeps the system square. The anchor is reachable
/// from every state under every policy, so the system is nonsingular.
pub fn evaluate_policy_exact_with_limit(inst: &Instance, policy: &Policy, limit: usize) -> Result<ValueTable> {
    policy.check_against(inst)?;
    let n = check_budget(inst, limit)?;
    let units = inst.units();
    let anchor = AugmentedState::ANCHOR.index(units);
    let mut matrix = DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for (row, state) in states(inst).enumerate() {
        let action = policy_action(policy, state);
        rhs[row] = state_cost(inst, state, action)?;
        for (col, p) in transition_probs(inst, state, action)? {
            matrix[(row, col)] -= p;
        }
    }
    matrix.column_mut(anchor).fill(0.5);
    let solution = solve_dense(matrix, rhs)?;
    let mu = solution[anchor];
    let mut values: Vec<f64> = solution.iter().copied().collect();
    values[anchor] = 0.0;
    let table = ValueTable { values, mu, units };
    let residual = bellman_residual(inst, policy, &table)?;
    if residual > RESIDUAL_TOLERANCE {
        return Err(Error::Numerical(format!(
            "Bellman residual {residual:e} exceeds {RESIDUAL_TOLERANCE:e}"
        )));
    }
    Ok(table)
}

/// Max-norm residual of the average-cost Bellman equation.
pub fn bellman_residual(inst: &Instance, policy: &Policy, table: &ValueTable) -> Result<f64> {
    let mut worst = 0.0f64;
    for (i, state) in states(inst).enumerate() {
        let action = policy_action(policy, state);
        let expected: f64 = transition_probs(inst, state, action)?
            .iter()
            .map(|&(j, p)| p * table.values[j])
            .sum();
        let rhs = state_cost(inst, state, action)? - table.mu / 2.0 + expected;
        worst = worst.max((table.values[i] - rhs).abs());
    }
    Ok(worst)
}

/// Greedy one-step lookahead on `table`, lowest unit index on ties.
pub fn improve_policy(inst: &Instance, table: &ValueTable) -> Policy {
    let units = inst.units();
    // the lookahead depends only on the post-decision mask
    let lookahead: Vec<f64> = BusyMask::all(units)
        .map(|after| race_row(inst, after).iter().map(|&(j, p)| p * table.values[j]).sum())
        .collect();
    Policy::greedy(inst, |node, mask, unit| {
        inst.response_time(unit, node) + lookahead[mask.with(unit).index()]
    })
}

/// Result of a policy-iteration run.
#[derive(Clone, Debug)]
pub struct PolicyIterationOutcome<V> {
    pub policy: Policy,
    pub values: V,
    pub trace: Vec<TraceRow>,
    /// Whether the last improvement left the policy unchanged.
    pub converged: bool,
}

/// Exact policy iteration on the full model.
pub fn policy_iteration(
    inst: &Instance,
    initial: Policy,
    max_iters: usize,
) -> Result<PolicyIterationOutcome<ValueTable>> {
    policy_iteration_with_limit(inst, initial, max_iters, DENSE_STATE_LIMIT)
}

pub fn policy_iteration_with_limit(
    inst: &Instance,
    initial: Policy,
    max_iters: usize,
    limit: usize,
) -> Result<PolicyIterationOutcome<ValueTable>> {
    check_budget(inst, limit)?;
    run_policy_iteration(
        initial,
        max_iters,
        |p| evaluate_policy_exact_with_limit(inst, p, limit),
        |v| improve_policy(inst, v),
        |v| v.mu,
    )
}

pub(crate) fn run_policy_iteration<V>(
    initial: Policy,
    max_iters: usize,
    mut evaluate: impl FnMut(&Policy) -> Result<V>,
    mut improve: impl FnMut(&V) -> Policy,
    mu_of: impl Fn(&V) -> f64,
) -> Result<PolicyIterationOutcome<V>> {
    if max_iters == 0 {
        return Err(Error::Validation("max_iters must be at least 1".into()));
    }
    let mut policy = initial;
    let mut trace = Vec::new();
    for iter in 0..max_iters {
        let values = evaluate(&policy)?;
        let next = improve(&values);
        let changes = policy.differences(&next);
        trace.push(TraceRow {
            iter,
            mu: mu_of(&values),
            policy_changes: changes,
        });
        if changes == 0 || iter + 1 == max_iters {
            return Ok(PolicyIterationOutcome {
                policy,
                values,
                trace,
                converged: changes == 0,
            });
        }
        policy = next;
    }
    unreachable!("loop returns on its last iteration")
}
