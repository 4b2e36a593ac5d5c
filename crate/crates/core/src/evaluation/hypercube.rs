//! Stationary analysis of the continuous-time busy-mask chain.
//!
//! Rates: `B -> B + pi(j, B)` at `lambda_j` while a unit is free, and
//! `B -> B - l` at `mu_l` for each busy unit `l`. Calls that find every unit
//! busy leave the mask unchanged.

use nalgebra::{DMatrix, DVector};

use super::{EvalMethod, EvalReport};
use crate::error::{Error, Result};
use crate::instance::{BusyMask, Instance, Policy};
use crate::linalg::solve_dense;

/// Largest fleet accepted by [`hypercube_stationary`].
pub const HYPERCUBE_UNIT_LIMIT: usize = 20;

/// Up to this many units the balance equations are solved directly.
const DENSE_UNIT_LIMIT: usize = 10;

pub const BALANCE_TOLERANCE: f64 = 1e-10;

const MAX_SWEEPS: usize = 200_000;

/// Outgoing transitions `(target, rate)` of every mask.
fn rate_rows(inst: &Instance, policy: &Policy) -> Vec<Vec<(usize, f64)>> {
    BusyMask::all(inst.units())
        .map(|mask| {
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(2 * inst.units());
            for node in 0..inst.nodes() {
                if let Some(unit) = policy.action(node, mask) {
                    let target = mask.with(unit).index();
                    match row.iter_mut().find(|(t, _)| *t == target) {
                        Some(entry) => entry.1 += inst.arrival_rate(node),
                        None => row.push((target, inst.arrival_rate(node))),
                    }
                }
            }
            for unit in mask.busy_units() {
                row.push((mask.without(unit).index(), inst.service_rate(unit)));
            }
            row
        })
        .collect()
}

/// Max-norm violation of global balance, `|(p Q)(x)|`.
pub fn balance_residual(inst: &Instance, policy: &Policy, dist: &[f64]) -> f64 {
    let rows = rate_rows(inst, policy);
    let mut flow = vec![0.0; dist.len()];
    for (from, row) in rows.iter().enumerate() {
        for &(to, rate) in row {
            flow[to] += dist[from] * rate;
            flow[from] -= dist[from] * rate;
        }
    }
    flow.iter().fold(0.0f64, |m, f| m.max(f.abs()))
}

/// Stationary distribution over busy masks, indexed by mask.
pub fn hypercube_stationary(inst: &Instance, policy: &Policy) -> Result<Vec<f64>> {
    policy.check_against(inst)?;
    if inst.units() > HYPERCUBE_UNIT_LIMIT {
        return Err(Error::Guard(format!(
            "the hypercube model supports at most {HYPERCUBE_UNIT_LIMIT} units, got {}",
            inst.units()
        )));
    }
    let rows = rate_rows(inst, policy);
    let mut dist = if inst.units() <= DENSE_UNIT_LIMIT {
        solve_balance_dense(&rows)?
    } else {
        solve_balance_gauss_seidel(&rows)?
    };
    // clear round-off below zero before renormalising
    dist.iter_mut().for_each(|p| *p = p.max(0.0));
    let total: f64 = dist.iter().sum();
    dist.iter_mut().for_each(|p| *p /= total);
    let residual = balance_residual(inst, policy, &dist);
    if residual > BALANCE_TOLERANCE {
        return Err(Error::Numerical(format!(
            "balance residual {residual:e} exceeds {BALANCE_TOLERANCE:e}"
        )));
    }
    Ok(dist)
}

fn solve_balance_dense(rows: &[Vec<(usize, f64)>]) -> Result<Vec<f64>> {
    let n = rows.len();
    // Q^T p = 0, with the last equation swapped for sum(p) = 1
    let mut matrix = DMatrix::<f64>::zeros(n, n);
    for (from, row) in rows.iter().enumerate() {
        for &(to, rate) in row {
            matrix[(to, from)] += rate;
            matrix[(from, from)] -= rate;
        }
    }
    matrix.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    Ok(solve_dense(matrix, rhs)?.iter().copied().collect())
}

fn solve_balance_gauss_seidel(rows: &[Vec<(usize, f64)>]) -> Result<Vec<f64>> {
    let n = rows.len();
    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut outflow = vec![0.0; n];
    for (from, row) in rows.iter().enumerate() {
        for &(to, rate) in row {
            incoming[to].push((from, rate));
            outflow[from] += rate;
        }
    }
    let mut dist = vec![1.0 / n as f64; n];
    for _ in 0..MAX_SWEEPS {
        for x in 0..n {
            let inflow: f64 = incoming[x].iter().map(|&(y, rate)| dist[y] * rate).sum();
            dist[x] = inflow / outflow[x];
        }
        let total: f64 = dist.iter().sum();
        dist.iter_mut().for_each(|p| *p /= total);
        let residual = (0..n)
            .map(|x| {
                let inflow: f64 = incoming[x].iter().map(|&(y, rate)| dist[y] * rate).sum();
                (inflow - dist[x] * outflow[x]).abs()
            })
            .fold(0.0f64, f64::max);
        if residual <= BALANCE_TOLERANCE / 10.0 {
            return Ok(dist);
        }
    }
    Err(Error::Numerical(format!(
        "Gauss-Seidel did not reach the balance tolerance in {MAX_SWEEPS} sweeps"
    )))
}

/// Exact mean response time per served call, loss fraction and unit
/// utilisations from the stationary distribution.
pub fn mean_response_time_exact(inst: &Instance, policy: &Policy) -> Result<EvalReport> {
    let dist = hypercube_stationary(inst, policy)?;
    let full = inst.full_mask();
    let loss = dist[full.index()];
    let mut weighted = 0.0;
    for mask in BusyMask::all(inst.units()).filter(|&m| m != full) {
        let per_mask: f64 = (0..inst.nodes())
            .map(|node| {
                let unit = policy.action(node, mask).expect("free unit available");
                inst.arrival_rate(node) * inst.response_time(unit, node)
            })
            .sum();
        weighted += dist[mask.index()] * per_mask;
    }
    let mean = weighted / (inst.total_arrival_rate() * (1.0 - loss));
    let utilization = (0..inst.units())
        .map(|unit| {
            BusyMask::all(inst.units())
                .filter(|m| m.is_busy(unit))
                .map(|m| dist[m.index()])
                .sum()
        })
        .collect();
    Ok(EvalReport {
        method: EvalMethod::Exact,
        mean_response_time: mean,
        loss_fraction: loss,
        utilization,
        ci_halfwidth: None,
        served_calls: None,
        replications: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instance, myopic_policy, GeneratorConfig};

    fn erlang_b(servers: usize, load: f64) -> f64 {
        // recursive form B(k) = a B(k-1) / (k + a B(k-1))
        (1..=servers).fold(1.0, |b, k| load * b / (k as f64 + load * b))
    }

    #[test]
    fn single_unit_busy_half_the_time() {
        let inst = Instance::new(vec![1.0], vec![1.0], vec![vec![4.0]]).unwrap();
        let dist = hypercube_stationary(&inst, &myopic_policy(&inst)).unwrap();
        assert!((dist[1] - 0.5).abs() < 1e-14);
        assert!((dist[1] - erlang_b(1, 1.0)).abs() < 1e-14);
    }

    #[test]
    fn homogeneous_pair_matches_erlang_b() {
        let inst = Instance::new(vec![1.5, 0.5], vec![1.0, 1.0], vec![vec![1.0, 3.0], vec![2.0, 2.5]]).unwrap();
        assert!((erlang_b(2, 2.0) - 0.4).abs() < 1e-15);
        let mut rng = rand::rng();
        for policy in [myopic_policy(&inst), Policy::random(&inst, &mut rng)] {
            let dist = hypercube_stationary(&inst, &policy).unwrap();
            assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!((dist[3] - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn single_server_mean_is_its_response_time() {
        let inst = Instance::new(vec![0.3], vec![2.0], vec![vec![6.5]]).unwrap();
        let report = mean_response_time_exact(&inst, &myopic_policy(&inst)).unwrap();
        assert!((report.mean_response_time - 6.5).abs() < 1e-12);
        assert!((report.loss_fraction - 0.3 / 2.3).abs() < 1e-12);
    }

    #[test]
    fn gauss_seidel_agrees_with_dense() {
        let inst = generate_instance(3, 6, 6, &GeneratorConfig::default()).unwrap();
        let mut rng = rand::rng();
        let policy = Policy::random(&inst, &mut rng);
        let rows = rate_rows(&inst, &policy);
        let dense = solve_balance_dense(&rows).unwrap();
        let iterative = solve_balance_gauss_seidel(&rows).unwrap();
        let gap = dense
            .iter()
            .zip(&iterative)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-9, "{gap}");
    }

    #[test]
    fn large_fleet_uses_iterative_solver() {
        let inst = generate_instance(3, 10, 12, &GeneratorConfig::default()).unwrap();
        let dist = hypercube_stationary(&inst, &myopic_policy(&inst)).unwrap();
        assert!(dist.iter().all(|&p| p >= 0.0));
        assert!(balance_residual(&inst, &myopic_policy(&inst), &dist) <= BALANCE_TOLERANCE);
    }
}
