//! Average-cost TD(0) on post-decision states inside approximate policy
//! iteration.
//!
//! Each outer iteration simulates the post-decision chain of the current
//! policy, learns a linear value approximation `J~(x) = phi(x) . r` along the
//! trajectory, then acts greedily on `t[a][j] + J~(B + a)`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{BusyMask, Instance, Policy};
use crate::post_decision::{greedy_on_masks, pd_cost};

/// Linear features over busy masks.
///
/// Only `dim` and `features` are required; the provided `value` and
/// `add_scaled` work through the dense feature vector and may be overridden
/// with sparse fast paths.
pub trait Basis {
    fn dim(&self) -> usize;

    fn features(&self, mask: BusyMask, out: &mut [f64]);

    fn value(&self, r: &[f64], mask: BusyMask) -> f64 {
        let mut phi = vec![0.0; self.dim()];
        self.features(mask, &mut phi);
        phi.iter().zip(r).map(|(f, w)| f * w).sum()
    }

    /// `r += scale * phi(mask)`.
    fn add_scaled(&self, r: &mut [f64], mask: BusyMask, scale: f64) {
        let mut phi = vec![0.0; self.dim()];
        self.features(mask, &mut phi);
        for (w, f) in r.iter_mut().zip(&phi) {
            *w += scale * f;
        }
    }
}

/// One indicator feature per mask, at the mask's integer index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TabularBasis {
    pub units: usize,
}

impl Basis for TabularBasis {
    fn dim(&self) -> usize {
        1 << self.units
    }

    fn features(&self, mask: BusyMask, out: &mut [f64]) {
        out.fill(0.0);
        out[mask.index()] = 1.0;
    }

    #[inline]
    fn value(&self, r: &[f64], mask: BusyMask) -> f64 {
        r[mask.index()]
    }

    #[inline]
    fn add_scaled(&self, r: &mut [f64], mask: BusyMask, scale: f64) {
        r[mask.index()] += scale;
    }
}

/// `J~(mask, r)`.
pub fn approx_value<B: Basis + ?Sized>(basis: &B, r: &[f64], mask: BusyMask) -> f64 {
    basis.value(r, mask)
}

/// `J~(r)` over all masks, i.e. `Phi r`.
pub fn approx_values<B: Basis + ?Sized>(basis: &B, r: &[f64], units: usize) -> Vec<f64> {
    BusyMask::all(units).map(|m| basis.value(r, m)).collect()
}

/// Parameters and running average-cost estimate of the learner.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerState {
    pub r: Vec<f64>,
    pub mu: f64,
    pub step: u64,
    /// Step-size parameter, `gamma_t = a / (a + t)`.
    pub a: f64,
}

impl LearnerState {
    pub fn new(dim: usize, a: f64) -> Result<Self> {
        if !(a >= 1.0 && a.is_finite()) {
            return Err(Error::Validation(format!("step-size parameter a = {a} must be >= 1")));
        }
        Ok(LearnerState {
            r: vec![0.0; dim],
            mu: 0.0,
            step: 0,
            a,
        })
    }

    #[inline]
    pub fn step_size(&self) -> f64 {
        self.a / (self.a + self.step as f64)
    }

    /// One TD(0) update on the transition `x -> x_next` with cost `cost`
    /// paid at `x`. Returns the temporal difference.
    pub fn td_step<B: Basis + ?Sized>(&mut self, basis: &B, cost: f64, x: BusyMask, x_next: BusyMask) -> f64 {
        let gamma = self.step_size();
        let d = cost - self.mu / 2.0 + basis.value(&self.r, x_next) - basis.value(&self.r, x);
        basis.add_scaled(&mut self.r, x, gamma * d);
        self.mu = (1.0 - gamma) * self.mu + 2.0 * gamma * cost;
        self.step += 1;
        d
    }
}

/// What happens on one transition of the post-decision chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    Dispatch {
        node: usize,
        unit: usize,
    },
    /// A call found every unit busy.
    Lost {
        node: usize,
    },
    Completion {
        unit: usize,
    },
}

impl Event {
    pub fn apply(self, mask: BusyMask) -> BusyMask {
        match self {
            Event::Dispatch { unit, .. } => mask.with(unit),
            Event::Lost { .. } => mask,
            Event::Completion { unit } => mask.without(unit),
        }
    }
}

fn cumulative_arrivals(inst: &Instance) -> Vec<f64> {
    inst.arrival_rates()
        .iter()
        .scan(0.0, |acc, &l| {
            *acc += l;
            Some(*acc)
        })
        .collect()
}

fn draw_event<R: Rng + ?Sized>(
    inst: &Instance,
    policy: &Policy,
    cum_arrivals: &[f64],
    mask: BusyMask,
    rng: &mut R,
) -> Event {
    let lambda = *cum_arrivals.last().expect("at least one node");
    let mut u = rng.random::<f64>() * inst.event_rate(mask);
    if u < lambda {
        let node = cum_arrivals.partition_point(|&c| c <= u).min(cum_arrivals.len() - 1);
        return match policy.action(node, mask) {
            Some(unit) => Event::Dispatch { node, unit },
            None => Event::Lost { node },
        };
    }
    u -= lambda;
    let mut last = None;
    for unit in mask.busy_units() {
        let rate = inst.service_rate(unit);
        if u < rate {
            return Event::Completion { unit };
        }
        u -= rate;
        last = Some(unit);
    }
    // rounding left u just past the last busy unit
    Event::Completion {
        unit: last.expect("u >= lambda implies a busy unit"),
    }
}

/// Draws the next post-decision mask from the chain of `policy`.
pub fn sample_next<R: Rng + ?Sized>(inst: &Instance, policy: &Policy, mask: BusyMask, rng: &mut R) -> BusyMask {
    sample_event(inst, policy, mask, rng).apply(mask)
}

/// Draws the next event, resolving arrivals down to the calling node.
pub fn sample_event<R: Rng + ?Sized>(inst: &Instance, policy: &Policy, mask: BusyMask, rng: &mut R) -> Event {
    draw_event(inst, policy, &cumulative_arrivals(inst), mask, rng)
}

/// Precomputed per-mask costs for fast rollouts of one policy.
struct RolloutModel<'a> {
    inst: &'a Instance,
    policy: &'a Policy,
    costs: Vec<f64>,
    cum_arrivals: Vec<f64>,
}

impl<'a> RolloutModel<'a> {
    fn new(inst: &'a Instance, policy: &'a Policy) -> Self {
        RolloutModel {
            inst,
            policy,
            costs: BusyMask::all(inst.units()).map(|m| pd_cost(inst, policy, m)).collect(),
            cum_arrivals: cumulative_arrivals(inst),
        }
    }
}

const RESPONSE_BATCHES: usize = 20;

/// Response-time statistics of the dispatches seen along a rollout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutStats {
    pub dispatches: u64,
    pub lost: u64,
    /// Mean response time over dispatched calls; NaN when none occurred.
    pub mean_response: f64,
    /// Batch-means standard error of `mean_response`.
    pub standard_error: f64,
}

fn rollout<B: Basis + ?Sized>(
    model: &RolloutModel<'_>,
    basis: &B,
    learner: &mut LearnerState,
    steps: u64,
    rng: &mut ChaCha8Rng,
) -> RolloutStats {
    let inst = model.inst;
    let mut x = BusyMask(rng.random_range(0..inst.mask_count() as u32));
    let mut batch_sum = [0.0f64; RESPONSE_BATCHES];
    let mut batch_count = [0u64; RESPONSE_BATCHES];
    let mut lost = 0;
    for t in 0..steps {
        let event = draw_event(inst, model.policy, &model.cum_arrivals, x, rng);
        match event {
            Event::Dispatch { node, unit } => {
                let b = (t as u128 * RESPONSE_BATCHES as u128 / steps as u128) as usize;
                batch_sum[b] += inst.response_time(unit, node);
                batch_count[b] += 1;
            }
            Event::Lost { .. } => lost += 1,
            Event::Completion { .. } => {}
        }
        let next = event.apply(x);
        learner.td_step(basis, model.costs[x.index()], x, next);
        x = next;
    }
    let dispatches: u64 = batch_count.iter().sum();
    let mean_response = batch_sum.iter().sum::<f64>() / dispatches as f64;
    let means: Vec<f64> = batch_sum
        .iter()
        .zip(&batch_count)
        .filter(|(_, &n)| n > 0)
        .map(|(s, &n)| s / n as f64)
        .collect();
    let standard_error = if means.len() >= 2 {
        let m = means.iter().sum::<f64>() / means.len() as f64;
        let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
        (var / means.len() as f64).sqrt()
    } else {
        f64::INFINITY
    };
    RolloutStats {
        dispatches,
        lost,
        mean_response,
        standard_error,
    }
}

/// Result of learning one policy's values.
#[derive(Clone, Debug)]
pub struct TdEvaluation {
    pub learner: LearnerState,
    pub stats: RolloutStats,
}

/// Runs one `steps`-long rollout of `policy` from a uniformly drawn mask,
/// applying a TD update per transition with the tabular basis.
pub fn td_evaluate(inst: &Instance, policy: &Policy, steps: u64, a: f64, seed: u64) -> Result<TdEvaluation> {
    policy.check_against(inst)?;
    let basis = TabularBasis { units: inst.units() };
    let mut learner = LearnerState::new(basis.dim(), a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats = if steps == 0 {
        RolloutStats::default()
    } else {
        rollout(&RolloutModel::new(inst, policy), &basis, &mut learner, steps, &mut rng)
    };
    Ok(TdEvaluation { learner, stats })
}

/// Settings for TD-based policy iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct TdConfig {
    /// Outer iterations `K`.
    pub iterations: usize,
    /// Transitions per rollout `T`.
    pub steps: u64,
    /// Step-size parameter `a`.
    pub a: f64,
    pub seed: u64,
    /// Carry `r` and `mu` over between outer iterations instead of
    /// restarting from zero.
    pub warm_start: bool,
}

impl Default for TdConfig {
    fn default() -> Self {
        TdConfig {
            iterations: 25,
            steps: 200_000,
            a: 1000.0,
            seed: 0,
            warm_start: false,
        }
    }
}

/// Per-iteration record of [`td_policy_iteration`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TdTraceRow {
    pub iter: usize,
    /// Sample mean response time of the calls dispatched during the rollout.
    pub sample_mean_response: f64,
    #[serde(skip)]
    pub sample_standard_error: f64,
    pub mu_estimate: f64,
    pub policy_changes: usize,
}

#[derive(Clone, Debug)]
pub struct TdOutcome {
    pub policy: Policy,
    pub trace: Vec<TdTraceRow>,
    /// Learned parameters of the last rollout.
    pub values: Vec<f64>,
}

/// Approximate policy iteration with TD-learned post-decision values.
pub fn td_policy_iteration(inst: &Instance, initial: Policy, config: &TdConfig) -> Result<TdOutcome> {
    initial.check_against(inst)?;
    if config.iterations == 0 || config.steps == 0 {
        return Err(Error::Validation("K and T must both be at least 1".into()));
    }
    let basis = TabularBasis { units: inst.units() };
    let mut learner = LearnerState::new(basis.dim(), config.a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = initial;
    let mut trace = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        if !config.warm_start {
            learner = LearnerState::new(basis.dim(), config.a)?;
        }
        let model = RolloutModel::new(inst, &policy);
        let stats = rollout(&model, &basis, &mut learner, config.steps, &mut rng);
        let next = greedy_on_masks(inst, &approx_values(&basis, &learner.r, inst.units()));
        trace.push(TdTraceRow {
            iter,
            sample_mean_response: stats.mean_response,
            sample_standard_error: stats.standard_error,
            mu_estimate: learner.mu,
            policy_changes: policy.differences(&next),
        });
        policy = next;
    }
    Ok(TdOutcome {
        policy,
        trace,
        values: learner.r,
    })
}

/// Writes the trace as CSV: `iter,sample_mean_response,mu_estimate,policy_changes`.
pub fn write_td_trace_csv<W: Write>(rows: &[TdTraceRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes per-mask values as CSV: `mask,r_value`.
pub fn write_values_csv<W: Write>(values: &[f64], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["mask", "r_value"])?;
    for (mask, value) in values.iter().enumerate() {
        writer.write_record([mask.to_string(), value.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}
