use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::Instance;
use crate::error::{Error, Result};

/// Settings for random instances on the unit square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Minutes of travel per unit of Euclidean distance.
    pub minutes_per_distance: f64,
    /// Fixed turnout time added to every response, in minutes.
    pub turnout: f64,
    /// Range for the raw per-node arrival rates.
    pub arrival_range: (f64, f64),
    /// Range for the per-unit service rates.
    pub service_range: (f64, f64),
    /// When set, arrival rates are rescaled so that `lambda / sum(mu)` equals
    /// this value.
    pub target_utilization: Option<f64>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            minutes_per_distance: 60.0,
            turnout: 1.0,
            arrival_range: (0.5, 1.5),
            service_range: (0.8, 1.2),
            target_utilization: Some(0.5),
        }
    }
}

impl GeneratorConfig {
    fn validate(&self) -> Result<()> {
        let positive_range = |name: &str, (lo, hi): (f64, f64)| {
            if lo > 0.0 && hi >= lo && hi.is_finite() {
                Ok(())
            } else {
                Err(Error::Validation(format!(
                    "{name} must satisfy 0 < low <= high, got ({lo}, {hi})"
                )))
            }
        };
        positive_range("arrival_range", self.arrival_range)?;
        positive_range("service_range", self.service_range)?;
        if !(self.minutes_per_distance > 0.0 && self.minutes_per_distance.is_finite()) {
            return Err(Error::Validation("minutes_per_distance must be positive".into()));
        }
        if !(self.turnout >= 0.0 && self.turnout.is_finite()) {
            return Err(Error::Validation("turnout must be non-negative".into()));
        }
        if let Some(u) = self.target_utilization {
            if !(u > 0.0 && u.is_finite()) {
                return Err(Error::Validation("target_utilization must be positive".into()));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Random instance with nodes and unit bases scattered over the unit square.
///
/// A pure function of its arguments.
pub fn generate_instance(seed: u64, nodes: usize, units: usize, config: &GeneratorConfig) -> Result<Instance> {
    config.validate()?;
    if nodes == 0 || units == 0 {
        return Err(Error::Validation(format!(
            "need at least one node and one unit, got J={nodes}, N={units}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let node_xy: Vec<(f64, f64)> = (0..nodes).map(|_| (rng.random(), rng.random())).collect();
    let base_xy: Vec<(f64, f64)> = (0..units).map(|_| (rng.random(), rng.random())).collect();
    let service: Vec<f64> = (0..units).map(|_| uniform(&mut rng, config.service_range)).collect();
    let mut arrival: Vec<f64> = (0..nodes).map(|_| uniform(&mut rng, config.arrival_range)).collect();
    if let Some(target) = config.target_utilization {
        let scale = target * service.iter().sum::<f64>() / arrival.iter().sum::<f64>();
        arrival.iter_mut().for_each(|rate| *rate *= scale);
    }
    let response = base_xy
        .iter()
        .map(|&(bx, by)| {
            node_xy
                .iter()
                .map(|&(nx, ny)| config.minutes_per_distance * (bx - nx).hypot(by - ny) + config.turnout)
                .collect()
        })
        .collect();
    let meta = json!({
        "seed": seed,
        "generator": config,
        "node_xy": node_xy,
        "base_xy": base_xy,
    });
    Instance::with_meta(arrival, service, response, meta)
}
