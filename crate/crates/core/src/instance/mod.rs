//! Problem data: demand nodes, units, rates and response times.
//!
//! Units are indexed from 0 internally. File formats and CLI output use
//! 1-based node and unit numbers.

mod generate;
mod io;
mod policy;

pub use generate::{generate_instance, GeneratorConfig};
pub use io::{load_instance, save_instance};
pub use policy::{myopic_policy, Policy};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest fleet the dense tables in this crate are sized for.
pub const MAX_UNITS: usize = 20;

/// Set of busy units; bit `i` is set when unit `i` is busy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusyMask(pub u32);

impl BusyMask {
    pub const EMPTY: BusyMask = BusyMask(0);

    /// The mask with all `units` busy.
    pub fn full(units: usize) -> Self {
        BusyMask(((1u64 << units) - 1) as u32)
    }

    /// Integer index of the mask, `sum of 2^i` over busy units.
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn is_busy(self, unit: usize) -> bool {
        self.0 >> unit & 1 == 1
    }

    #[inline]
    pub fn is_full(self, units: usize) -> bool {
        self == BusyMask::full(units)
    }

    #[inline]
    pub fn with(self, unit: usize) -> Self {
        BusyMask(self.0 | 1 << unit)
    }

    #[inline]
    pub fn without(self, unit: usize) -> Self {
        BusyMask(self.0 & !(1 << unit))
    }

    pub fn busy_count(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Busy units in increasing index order.
    pub fn busy_units(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let unit = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(unit)
        })
    }

    /// Free units (out of `units`) in increasing index order.
    pub fn free_units(self, units: usize) -> impl Iterator<Item = usize> {
        BusyMask(!self.0 & BusyMask::full(units).0).busy_units()
    }

    /// Every mask over `units` units, in index order.
    pub fn all(units: usize) -> impl Iterator<Item = BusyMask> {
        (0..1u32 << units).map(BusyMask)
    }
}

impl fmt::Display for BusyMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A validated dispatch problem.
///
/// `response[i][j]` is the mean response time from the base of unit `i` to
/// node `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    arrival_rates: Vec<f64>,
    service_rates: Vec<f64>,
    response: Vec<Vec<f64>>,
    meta: serde_json::Value,
}

impl Instance {
    pub fn new(arrival_rates: Vec<f64>, service_rates: Vec<f64>, response: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_meta(arrival_rates, service_rates, response, serde_json::Value::Null)
    }

    pub fn with_meta(
        arrival_rates: Vec<f64>,
        service_rates: Vec<f64>,
        response: Vec<Vec<f64>>,
        meta: serde_json::Value,
    ) -> Result<Self> {
        let nodes = arrival_rates.len();
        let units = service_rates.len();
        if nodes == 0 {
            return Err(Error::Validation("at least one demand node is required".into()));
        }
        if units == 0 {
            return Err(Error::Validation("at least one unit is required".into()));
        }
        if units > MAX_UNITS {
            return Err(Error::Validation(format!(
                "{units} units exceeds the supported maximum of {MAX_UNITS}"
            )));
        }
        if response.len() != units {
            return Err(Error::parse(
                "t",
                format!("expected {units} rows (one per unit), found {}", response.len()),
            ));
        }
        for (i, row) in response.iter().enumerate() {
            if row.len() != nodes {
                return Err(Error::parse(
                    format!("t[{}]", i + 1),
                    format!("expected {nodes} columns (one per node), found {}", row.len()),
                ));
            }
        }
        for (j, &rate) in arrival_rates.iter().enumerate() {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(Error::Validation(format!(
                    "lambda[{}] = {rate} must be positive and finite",
                    j + 1
                )));
            }
        }
        for (i, &rate) in service_rates.iter().enumerate() {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(Error::Validation(format!(
                    "mu[{}] = {rate} must be positive and finite",
                    i + 1
                )));
            }
        }
        for (i, row) in response.iter().enumerate() {
            for (j, &time) in row.iter().enumerate() {
                if !(time.is_finite() && time >= 0.0) {
                    return Err(Error::Validation(format!(
                        "t[{}][{}] = {time} must be non-negative and finite",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Instance {
            arrival_rates,
            service_rates,
            response,
            meta,
        })
    }

    /// Number of demand nodes `J`.
    pub fn nodes(&self) -> usize {
        self.arrival_rates.len()
    }

    /// Number of units `N`.
    pub fn units(&self) -> usize {
        self.service_rates.len()
    }

    /// Number of busy masks, `2^N`.
    pub fn mask_count(&self) -> usize {
        1 << self.units()
    }

    pub fn arrival_rates(&self) -> &[f64] {
        &self.arrival_rates
    }

    pub fn arrival_rate(&self, node: usize) -> f64 {
        self.arrival_rates[node]
    }

    /// Overall call rate, the sum of the per-node rates.
    pub fn total_arrival_rate(&self) -> f64 {
        self.arrival_rates.iter().sum()
    }

    pub fn service_rates(&self) -> &[f64] {
        &self.service_rates
    }

    pub fn service_rate(&self, unit: usize) -> f64 {
        self.service_rates[unit]
    }

    pub fn total_service_rate(&self) -> f64 {
        self.service_rates.iter().sum()
    }

    /// Mean response time from unit `unit` to node `node`.
    #[inline]
    pub fn response_time(&self, unit: usize, node: usize) -> f64 {
        self.response[unit][node]
    }

    pub fn response_times(&self) -> &[Vec<f64>] {
        &self.response
    }

    pub fn meta(&self) -> &serde_json::Value {
        &self.meta
    }

    /// Offered load per unit of capacity, `lambda / sum(mu)`.
    pub fn utilization(&self) -> f64 {
        self.total_arrival_rate() / self.total_service_rate()
    }

    /// Total event rate out of a post-decision mask: all arrivals plus the
    /// completion rates of its busy units.
    pub fn event_rate(&self, mask: BusyMask) -> f64 {
        self.total_arrival_rate() + mask.busy_units().map(|k| self.service_rates[k]).sum::<f64>()
    }

    pub fn full_mask(&self) -> BusyMask {
        BusyMask::full(self.units())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_index_is_sum_of_powers() {
        let mask = BusyMask::EMPTY.with(0).with(3);
        assert_eq!(mask.index(), 1 + 8);
        assert_eq!(mask.busy_units().collect::<Vec<_>>(), vec![0, 3]);
        assert_eq!(mask.free_units(5).collect::<Vec<_>>(), vec![1, 2, 4]);
        assert!(mask.without(3).without(0) == BusyMask::EMPTY);
        assert!(BusyMask::full(4).is_full(4));
        assert_eq!(BusyMask::full(MAX_UNITS).busy_count(), MAX_UNITS);
    }

    #[test]
    fn rejects_non_positive_rates() {
        let err = Instance::new(vec![1.0, 0.0], vec![1.0], vec![vec![1.0, 2.0]]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        let err = Instance::new(vec![1.0], vec![-1.0], vec![vec![1.0]]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        let err = Instance::new(vec![1.0], vec![1.0], vec![vec![-0.5]]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn rejects_misshapen_response_matrix() {
        let err = Instance::new(vec![1.0, 1.0], vec![1.0], vec![vec![1.0]]).unwrap_err();
        assert!(
            matches!(err, Error::Parse { ref field, .. } if field == "t[1]"),
            "{err}"
        );
        let err = Instance::new(vec![1.0], vec![1.0, 1.0], vec![vec![1.0]]).unwrap_err();
        assert!(matches!(err, Error::Parse { ref field, .. } if field == "t"), "{err}");
    }

    #[test]
    fn total_rate_is_sum_of_node_rates() {
        let inst = Instance::new(vec![0.25, 0.5, 1.25], vec![1.0], vec![vec![0.0; 3]]).unwrap();
        assert_eq!(inst.total_arrival_rate(), 0.25 + 0.5 + 1.25);
        assert_eq!(inst.event_rate(BusyMask(1)), 3.0);
    }
}
