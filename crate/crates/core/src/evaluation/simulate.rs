//! Discrete-event simulation of the dispatch loss system.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{EvalMethod, EvalReport};
use crate::error::{Error, Result};
use crate::instance::{Instance, Policy};

/// Share of each replication's served calls discarded as warm-up.
pub const WARMUP_FRACTION: f64 = 0.05;

const SINGLE_RUN_BATCHES: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Served calls per replication, warm-up included.
    pub calls: u64,
    pub replications: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            calls: 1_000_000,
            replications: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum EventKind {
    Arrival,
    Completion(usize),
}

#[derive(Clone, Copy, Debug)]
struct Scheduled {
    time: f64,
    kind: EventKind,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // min-heap on time
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time)
    }
}

struct Replication {
    mean_response: f64,
    batch_means: Vec<f64>,
    arrivals: u64,
    lost: u64,
    busy_time: Vec<f64>,
    elapsed: f64,
}

fn replicate(inst: &Instance, policy: &Policy, calls: u64, mut rng: ChaCha8Rng) -> Replication {
    let units = inst.units();
    let warmup = (calls as f64 * WARMUP_FRACTION).floor() as u64;
    let measured = calls - warmup;
    let nodes = WeightedIndex::new(inst.arrival_rates()).expect("positive arrival rates");
    let interarrival = Exp::new(inst.total_arrival_rate()).expect("positive total rate");
    let service: Vec<Exp<f64>> = inst
        .service_rates()
        .iter()
        .map(|&m| Exp::new(m).expect("positive service rate"))
        .collect();

    let mut queue = BinaryHeap::new();
    queue.push(Scheduled {
        time: interarrival.sample(&mut rng),
        kind: EventKind::Arrival,
    });
    let mut mask = crate::instance::BusyMask::EMPTY;
    let mut served = 0u64;
    let mut measuring = warmup == 0;
    let mut start = 0.0;
    let mut last = 0.0;
    let mut busy_time = vec![0.0; units];
    let mut arrivals = 0u64;
    let mut lost = 0u64;
    let batch_len = measured.div_ceil(SINGLE_RUN_BATCHES as u64).max(1);
    let mut batch_sums = [0.0; SINGLE_RUN_BATCHES];
    let mut batch_counts = [0u64; SINGLE_RUN_BATCHES];

    while served < calls {
        let event = queue.pop().expect("an arrival is always scheduled");
        let now = event.time;
        if measuring {
            for unit in mask.busy_units() {
                busy_time[unit] += now - last;
            }
        }
        last = now;
        match event.kind {
            EventKind::Arrival => {
                queue.push(Scheduled {
                    time: now + interarrival.sample(&mut rng),
                    kind: EventKind::Arrival,
                });
                let node = nodes.sample(&mut rng);
                if measuring {
                    arrivals += 1;
                }
                match policy.action(node, mask) {
                    Some(unit) => {
                        mask = mask.with(unit);
                        queue.push(Scheduled {
                            time: now + service[unit].sample(&mut rng),
                            kind: EventKind::Completion(unit),
                        });
                        if measuring {
                            let k = served - warmup;
                            let b = (k / batch_len) as usize;
                            batch_sums[b] += inst.response_time(unit, node);
                            batch_counts[b] += 1;
                        }
                        served += 1;
                        if served == warmup {
                            measuring = true;
                            start = now;
                        }
                    }
                    None => {
                        if measuring {
                            lost += 1;
                        }
                    }
                }
            }
            EventKind::Completion(unit) => mask = mask.without(unit),
        }
    }
    let total: f64 = batch_sums.iter().sum();
    let batch_means = batch_sums
        .iter()
        .zip(&batch_counts)
        .filter(|(_, &n)| n > 0)
        .map(|(s, &n)| s / n as f64)
        .collect();
    Replication {
        mean_response: total / measured as f64,
        batch_means,
        arrivals,
        lost,
        busy_time,
        elapsed: last - start,
    }
}

fn mean_and_halfwidth(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let quantile = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean, quantile * (var / n as f64).sqrt())
}

/// Simulates `replications` independent runs of `calls` served calls each
/// and reports the across-replication mean with a 95% confidence interval.
///
/// Replication `k` draws from stream `k` of a ChaCha generator keyed by
/// `seed`, so results do not depend on thread scheduling.
pub fn simulate(inst: &Instance, policy: &Policy, config: &SimConfig) -> Result<EvalReport> {
    policy.check_against(inst)?;
    if config.calls == 0 || config.replications == 0 {
        return Err(Error::Validation(
            "simulation needs at least one served call and one replication".into(),
        ));
    }
    let runs: Vec<Replication> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(rep as u64);
            replicate(inst, policy, config.calls, rng)
        })
        .collect();
    let (mean, halfwidth) = if runs.len() >= 2 {
        let means: Vec<f64> = runs.iter().map(|r| r.mean_response).collect();
        mean_and_halfwidth(&means)
    } else {
        let (_, halfwidth) = mean_and_halfwidth(&runs[0].batch_means);
        (runs[0].mean_response, halfwidth)
    };
    let arrivals: u64 = runs.iter().map(|r| r.arrivals).sum();
    let lost: u64 = runs.iter().map(|r| r.lost).sum();
    let elapsed: f64 = runs.iter().map(|r| r.elapsed).sum();
    let utilization = (0..inst.units())
        .map(|unit| runs.iter().map(|r| r.busy_time[unit]).sum::<f64>() / elapsed)
        .collect();
    Ok(EvalReport {
        method: EvalMethod::Simulated,
        mean_response_time: mean,
        loss_fraction: if arrivals == 0 {
            0.0
        } else {
            lost as f64 / arrivals as f64
        },
        utilization,
        ci_halfwidth: Some(halfwidth),
        served_calls: Some(config.calls),
        replications: Some(config.replications),
    })
}
