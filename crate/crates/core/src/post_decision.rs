//! The post-decision formulation: the chain over busy masks observed right
//! after each dispatch decision.
//!
//! A policy induces, for every mask, a partition of the demand nodes into
//! dispatch regions (one per free unit). Arrivals from region `l` move the
//! mask to `mask + l`; completions of busy unit `l` move it to `mask - l`.
//! The resulting `2^N`-state model has the same average cost as the full
//! augmented model, and its values are a rate-weighted average of the full
//! model's values (see [`full_to_post_decision`]).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exact_mdp::{
    self, run_policy_iteration, AugmentedState, PolicyIterationOutcome, ValueTable, RESIDUAL_TOLERANCE,
};
use crate::instance::{BusyMask, Instance, Policy};
use crate::linalg::solve_dense;

/// Largest fleet the dense post-decision solver accepts (`2^12` masks).
pub const PD_UNIT_LIMIT: usize = 12;

/// For mask `mask`, the nodes whose calls go to each unit (indexed by unit).
///
/// Busy units get empty regions; a full mask has no regions at all.
pub fn dispatch_regions(inst: &Instance, policy: &Policy, mask: BusyMask) -> Vec<Vec<usize>> {
    let mut regions = vec![Vec::new(); inst.units()];
    for node in 0..inst.nodes() {
        if let Some(unit) = policy.action(node, mask) {
            regions[unit].push(node);
        }
    }
    regions
}

/// Transition row of the post-decision chain. A full mask keeps a self-loop
/// of probability `lambda / D` for calls lost to mutual aid.
pub fn pd_transition_probs(inst: &Instance, policy: &Policy, mask: BusyMask) -> Vec<(BusyMask, f64)> {
    let rate = inst.event_rate(mask);
    let mut row = Vec::with_capacity(inst.units() + 1);
    if mask.is_full(inst.units()) {
        row.push((mask, inst.total_arrival_rate() / rate));
    } else {
        for (unit, region) in dispatch_regions(inst, policy, mask).iter().enumerate() {
            if !region.is_empty() {
                let flow: f64 = region.iter().map(|&j| inst.arrival_rate(j)).sum();
                row.push((mask.with(unit), flow / rate));
            }
        }
    }
    for unit in mask.busy_units() {
        row.push((mask.without(unit), inst.service_rate(unit) / rate));
    }
    row
}

/// Expected response time paid on the transition out of `mask`.
pub fn pd_cost(inst: &Instance, policy: &Policy, mask: BusyMask) -> f64 {
    let weighted: f64 = (0..inst.nodes())
        .filter_map(|node| {
            policy
                .action(node, mask)
                .map(|unit| inst.arrival_rate(node) * inst.response_time(unit, node))
        })
        .sum();
    weighted / inst.event_rate(mask)
}

/// Costs and transition rows of the post-decision chain of one policy.
#[derive(Clone, Debug, PartialEq)]
pub struct PdChain {
    pub costs: Vec<f64>,
    pub rows: Vec<Vec<(BusyMask, f64)>>,
}

impl PdChain {
    pub fn build(inst: &Instance, policy: &Policy) -> Self {
        let masks: Vec<BusyMask> = BusyMask::all(inst.units()).collect();
        PdChain {
            costs: masks.iter().map(|&m| pd_cost(inst, policy, m)).collect(),
            rows: masks.iter().map(|&m| pd_transition_probs(inst, policy, m)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }
}

/// Differential values over busy masks, zero at the empty mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PdValueTable {
    pub values: Vec<f64>,
    pub mu: f64,
}

impl PdValueTable {
    pub fn value(&self, mask: BusyMask) -> f64 {
        self.values[mask.index()]
    }

    pub fn shifted(&self, m: f64) -> PdValueTable {
        PdValueTable {
            values: self.values.iter().map(|v| v + m).collect(),
            mu: self.mu,
        }
    }
}

fn check_guard(inst: &Instance) -> Result<()> {
    if inst.units() > PD_UNIT_LIMIT {
        return Err(Error::Guard(format!(
            "the post-decision model has 2^{} masks, above the dense limit of 2^{PD_UNIT_LIMIT}; \
             use TD learning instead",
            inst.units()
        )));
    }
    Ok(())
}

pub fn evaluate_policy_pd(inst: &Instance, policy: &Policy) -> Result<PdValueTable> {
    policy.check_against(inst)?;
    check_guard(inst)?;
    evaluate_chain(&PdChain::build(inst, policy))
}

/// Solves `J = c - mu/2 e + P J` with `J(empty) = 0`, the empty mask's column
/// carrying the unknown `mu`.
pub fn evaluate_chain(chain: &PdChain) -> Result<PdValueTable> {
    let n = chain.len();
    let mut matrix = DMatrix::<f64>::identity(n, n);
    for (i, row) in chain.rows.iter().enumerate() {
        for &(next, p) in row {
            matrix[(i, next.index())] -= p;
        }
    }
    matrix.column_mut(0).fill(0.5);
    let solution = solve_dense(matrix, DVector::from_column_slice(&chain.costs))?;
    let mut values: Vec<f64> = solution.iter().copied().collect();
    let mu = values[0];
    values[0] = 0.0;
    let table = PdValueTable { values, mu };
    let residual = pd_bellman_residual(chain, &table);
    if residual > RESIDUAL_TOLERANCE {
        return Err(Error::Numerical(format!(
            "post-decision Bellman residual {residual:e} exceeds {RESIDUAL_TOLERANCE:e}"
        )));
    }
    Ok(table)
}

pub fn pd_bellman_residual(chain: &PdChain, table: &PdValueTable) -> f64 {
    chain
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let expected: f64 = row.iter().map(|&(m, p)| p * table.values[m.index()]).sum();
            (table.values[i] - (chain.costs[i] - table.mu / 2.0 + expected)).abs()
        })
        .fold(0.0, f64::max)
}

/// Greedy policy on post-decision values: minimise
/// `t[a][j] + value(mask + a)` over free units `a`.
pub fn greedy_on_masks(inst: &Instance, values: &[f64]) -> Policy {
    Policy::greedy(inst, |node, mask, unit| {
        inst.response_time(unit, node) + values[mask.with(unit).index()]
    })
}

pub fn pd_improve_policy(inst: &Instance, table: &PdValueTable) -> Policy {
    greedy_on_masks(inst, &table.values)
}

/// Policy iteration on the post-decision model.
pub fn pd_policy_iteration(
    inst: &Instance,
    initial: Policy,
    max_iters: usize,
) -> Result<PolicyIterationOutcome<PdValueTable>> {
    check_guard(inst)?;
    run_policy_iteration(
        initial,
        max_iters,
        |p| evaluate_policy_pd(inst, p),
        |v| pd_improve_policy(inst, v),
        |v| v.mu,
    )
}

/// Maps full-model values to post-decision values:
/// `J(B) = sum_j lambda_j / G V(j, B) + sum_{k busy} mu_k / G V(∅, B - k)`
/// with `G = lambda + sum_{k busy} mu_k`.
pub fn full_to_post_decision(inst: &Instance, table: &ValueTable) -> Vec<f64> {
    BusyMask::all(inst.units())
        .map(|mask| {
            let gamma = inst.event_rate(mask);
            let arrivals: f64 = (0..inst.nodes())
                .map(|j| inst.arrival_rate(j) * table.value(AugmentedState::call(j, mask)))
                .sum();
            let completions: f64 = mask
                .busy_units()
                .map(|k| inst.service_rate(k) * table.value(AugmentedState::completion(mask.without(k))))
                .sum();
            (arrivals + completions) / gamma
        })
        .collect()
}

/// Discrepancies between the full and post-decision models for one policy.
#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub mu_full: f64,
    pub mu_post_decision: f64,
    /// `|mu_post_decision - mu_full|`.
    pub mu_gap: f64,
    /// Largest violation of the value mapping over all masks after both
    /// sides are pinned to zero at the empty mask.
    pub max_value_violation: f64,
}

impl EquivalenceReport {
    pub fn holds(&self, tolerance: f64) -> bool {
        self.mu_gap <= tolerance && self.max_value_violation <= tolerance
    }
}

pub fn check_equivalence(inst: &Instance, policy: &Policy) -> Result<EquivalenceReport> {
    check_equivalence_with_chain(inst, policy, &PdChain::build(inst, policy))
}

/// As [`check_equivalence`], with the post-decision side solved from a
/// caller-supplied chain.
pub fn check_equivalence_with_chain(inst: &Instance, policy: &Policy, chain: &PdChain) -> Result<EquivalenceReport> {
    policy.check_against(inst)?;
    let full = exact_mdp::evaluate_policy_exact(inst, policy)?;
    let pd = evaluate_chain(chain)?;
    let mapped = full_to_post_decision(inst, &full);
    let offset = mapped[0] - pd.values[0];
    let max_value_violation = mapped
        .iter()
        .zip(&pd.values)
        .map(|(m, j)| (m - offset - j).abs())
        .fold(0.0, f64::max);
    Ok(EquivalenceReport {
        mu_full: full.mu,
        mu_post_decision: pd.mu,
        mu_gap: (pd.mu - full.mu).abs(),
        max_value_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instance, myopic_policy, GeneratorConfig};

    fn two_by_two() -> Instance {
        Instance::new(vec![1.0, 1.0], vec![1.0, 1.0], vec![vec![1.0, 9.0], vec![9.0, 1.0]]).unwrap()
    }

    #[test]
    fn regions_for_full_and_forced_masks() {
        let inst = generate_instance(3, 5, 3, &GeneratorConfig::default()).unwrap();
        let policy = myopic_policy(&inst);
        assert!(dispatch_regions(&inst, &policy, BusyMask(7)).iter().all(Vec::is_empty));
        let regions = dispatch_regions(&inst, &policy, BusyMask(0b101));
        assert_eq!(regions[1], (0..5).collect::<Vec<_>>());
        assert!(regions[0].is_empty() && regions[2].is_empty());
    }

    #[test]
    fn regions_partition_nodes() {
        let inst = generate_instance(6, 9, 4, &GeneratorConfig::default()).unwrap();
        let policy = myopic_policy(&inst);
        for mask in BusyMask::all(4).filter(|m| !m.is_full(4)) {
            let mut all: Vec<usize> = dispatch_regions(&inst, &policy, mask).concat();
            all.sort();
            assert_eq!(all, (0..9).collect::<Vec<_>>());
        }
    }

    #[test]
    fn myopic_regions_split_by_distance() {
        let inst = two_by_two();
        let regions = dispatch_regions(&inst, &myopic_policy(&inst), BusyMask::EMPTY);
        assert_eq!(regions, vec![vec![0], vec![1]]);
    }

    #[test]
    fn lost_call_self_loop() {
        let inst = Instance::new(vec![1.0], vec![1.0], vec![vec![2.0]]).unwrap();
        let row = pd_transition_probs(&inst, &myopic_policy(&inst), BusyMask(1));
        assert_eq!(row, vec![(BusyMask(1), 0.5), (BusyMask::EMPTY, 0.5)]);
    }

    #[test]
    fn empty_mask_row_by_hand() {
        let inst = two_by_two();
        let row = pd_transition_probs(&inst, &myopic_policy(&inst), BusyMask::EMPTY);
        assert_eq!(row, vec![(BusyMask(1), 0.5), (BusyMask(2), 0.5)]);
    }

    #[test]
    fn rows_sum_to_one() {
        let inst = generate_instance(12, 7, 4, &GeneratorConfig::default()).unwrap();
        let mut rng = rand::rng();
        let policy = Policy::random(&inst, &mut rng);
        for mask in BusyMask::all(4) {
            let sum: f64 = pd_transition_probs(&inst, &policy, mask).iter().map(|r| r.1).sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn cost_cases() {
        let tau = 3.25;
        let inst = Instance::new(vec![1.0], vec![1.0], vec![vec![tau]]).unwrap();
        let policy = myopic_policy(&inst);
        assert_eq!(pd_cost(&inst, &policy, BusyMask::EMPTY), tau);
        assert_eq!(pd_cost(&inst, &policy, BusyMask(1)), 0.0);
    }

    #[test]
    fn cost_decomposes_over_dispatched_units() {
        // c(s_x) = sum_l c_l(s_x) p(s_x, s_x + l), with c_l the mean
        // response time of unit l over its own region.
        let inst = generate_instance(21, 8, 4, &GeneratorConfig::default()).unwrap();
        let mut rng = rand::rng();
        let policy = Policy::random(&inst, &mut rng);
        for mask in BusyMask::all(4) {
            let row = pd_transition_probs(&inst, &policy, mask);
            let regions = dispatch_regions(&inst, &policy, mask);
            let mut total = 0.0;
            for (unit, region) in regions.iter().enumerate().filter(|(_, r)| !r.is_empty()) {
                let flow: f64 = region.iter().map(|&j| inst.arrival_rate(j)).sum();
                let c_l: f64 = region
                    .iter()
                    .map(|&j| inst.arrival_rate(j) * inst.response_time(unit, j))
                    .sum::<f64>()
                    / flow;
                let p = row.iter().find(|(m, _)| *m == mask.with(unit)).unwrap().1;
                total += c_l * p;
            }
            assert!((total - pd_cost(&inst, &policy, mask)).abs() < 1e-12);
        }
    }

    #[test]
    fn one_unit_average_cost() {
        let tau = 6.0;
        let inst = Instance::new(vec![1.0], vec![1.0], vec![vec![tau]]).unwrap();
        let table = evaluate_policy_pd(&inst, &myopic_policy(&inst)).unwrap();
        assert!((table.mu - 2.0 * tau / 3.0).abs() < 1e-12);
        assert_eq!(table.values[0], 0.0);
    }

    #[test]
    fn one_unit_value_mapping_by_hand() {
        // With lambda = mu = 1: V(∅,{}) = 0, V(1,{}) = tau - g + J({1}),
        // J({}) = V(1,{}) and J({1}) = (V(1,{1}) + V(∅,{})) / 2.
        let tau = 6.0;
        let inst = Instance::new(vec![1.0], vec![1.0], vec![vec![tau]]).unwrap();
        let policy = myopic_policy(&inst);
        let full = exact_mdp::evaluate_policy_exact(&inst, &policy).unwrap();
        let mapped = full_to_post_decision(&inst, &full);
        let v_call_idle = full.value(AugmentedState::call(0, BusyMask::EMPTY));
        let v_call_busy = full.value(AugmentedState::call(0, BusyMask(1)));
        assert!((mapped[0] - v_call_idle).abs() < 1e-12);
        assert!((mapped[1] - 0.5 * v_call_busy).abs() < 1e-12);
        // g = tau/3 per transition; by hand V(1,{1}) = -2g and V(1,{}) = g
        assert!((v_call_idle - tau / 3.0).abs() < 1e-12);
        assert!((v_call_busy + 2.0 * tau / 3.0).abs() < 1e-12);
        let report = check_equivalence(&inst, &policy).unwrap();
        assert!(report.holds(1e-12), "{report:?}");
    }

    #[test]
    fn shifted_values_still_solve() {
        let inst = generate_instance(2, 5, 3, &GeneratorConfig::default()).unwrap();
        let chain = PdChain::build(&inst, &myopic_policy(&inst));
        let table = evaluate_chain(&chain).unwrap();
        assert!(pd_bellman_residual(&chain, &table.shifted(-40.0)) < 1e-9);
    }

    #[test]
    fn same_average_cost_as_full_model() {
        let inst = generate_instance(17, 5, 3, &GeneratorConfig::default()).unwrap();
        let policy = myopic_policy(&inst);
        let full = exact_mdp::evaluate_policy_exact(&inst, &policy).unwrap();
        let pd = evaluate_policy_pd(&inst, &policy).unwrap();
        assert!((full.mu - pd.mu).abs() <= 1e-9);
    }

    #[test]
    fn zero_values_and_forced_units() {
        let inst = generate_instance(4, 6, 3, &GeneratorConfig::default()).unwrap();
        assert_eq!(greedy_on_masks(&inst, &[0.0; 8]), myopic_policy(&inst));
        let values: Vec<f64> = (0..8).map(|i| -100.0 * i as f64).collect();
        let policy = greedy_on_masks(&inst, &values);
        for node in 0..6 {
            assert_eq!(policy.action(node, BusyMask(0b011)), Some(2));
        }
    }

    #[test]
    fn improvement_matches_full_model() {
        for seed in 0..5 {
            let inst = generate_instance(seed, 6, 3, &GeneratorConfig::default()).unwrap();
            let mut rng = rand::rng();
            let policy = Policy::random(&inst, &mut rng);
            let full = exact_mdp::evaluate_policy_exact(&inst, &policy).unwrap();
            let pd = evaluate_policy_pd(&inst, &policy).unwrap();
            assert_eq!(exact_mdp::improve_policy(&inst, &full), pd_improve_policy(&inst, &pd));
        }
    }

    #[test]
    fn perturbed_chain_is_flagged() {
        let inst = generate_instance(5, 4, 3, &GeneratorConfig::default()).unwrap();
        let policy = myopic_policy(&inst);
        let mut chain = PdChain::build(&inst, &policy);
        let row = &mut chain.rows[3];
        let shift = 0.2 * row[0].1.min(row[1].1);
        row[0].1 += shift;
        row[1].1 -= shift;
        let report = check_equivalence_with_chain(&inst, &policy, &chain).unwrap();
        assert!(report.max_value_violation > 1e-3 || report.mu_gap > 1e-3, "{report:?}");
        assert!(!report.holds(1e-9));
    }

    #[test]
    fn guard() {
        let inst = generate_instance(1, 3, 13, &GeneratorConfig::default()).unwrap();
        assert!(matches!(
            evaluate_policy_pd(&inst, &myopic_policy(&inst)),
            Err(Error::Guard(_))
        ));
    }

    #[test]
    fn single_unit_converges_immediately() {
        let inst = generate_instance(8, 5, 1, &GeneratorConfig::default()).unwrap();
        let out = pd_policy_iteration(&inst, myopic_policy(&inst), 10).unwrap();
        assert!(out.converged);
        assert_eq!(out.trace.len(), 1);
    }
}
