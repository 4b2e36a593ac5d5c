use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use super::{BusyMask, Instance};
use crate::error::{Error, Result};

const NO_ACTION: u8 = u8::MAX;

/// Relative slack under which two candidate scores count as tied.
pub(crate) const TIE_TOLERANCE: f64 = 1e-10;

/// A deterministic stationary dispatch rule: for every call node and every
/// busy mask with a free unit, the unit to send.
///
/// Full masks carry no action; calls arriving then are lost to mutual aid.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Policy {
    nodes: usize,
    units: usize,
    actions: Vec<u8>,
}

impl Policy {
    /// Builds a policy from a rule evaluated at every decision state.
    ///
    /// Fails if the rule picks a unit that is busy or out of range.
    pub fn from_fn(inst: &Instance, mut rule: impl FnMut(usize, BusyMask) -> usize) -> Result<Self> {
        let (nodes, units) = (inst.nodes(), inst.units());
        let masks = inst.mask_count();
        let full = inst.full_mask();
        let mut actions = vec![NO_ACTION; nodes * masks];
        for node in 0..nodes {
            for mask in BusyMask::all(units) {
                if mask == full {
                    continue;
                }
                let unit = rule(node, mask);
                if unit >= units || mask.is_busy(unit) {
                    return Err(Error::InfeasibleAction(format!(
                        "unit {} is not free at node {}, mask {mask}",
                        unit + 1,
                        node + 1
                    )));
                }
                actions[node * masks + mask.index()] = unit as u8;
            }
        }
        Ok(Policy { nodes, units, actions })
    }

    /// Greedy policy: at each decision state pick the free unit with the
    /// smallest `score(node, mask, unit)`, ties going to the lowest index.
    pub fn greedy(inst: &Instance, mut score: impl FnMut(usize, BusyMask, usize) -> f64) -> Self {
        Policy::from_fn(inst, |node, mask| {
            let mut best: Option<(usize, f64)> = None;
            for unit in mask.free_units(inst.units()) {
                let q = score(node, mask, unit);
                match best {
                    Some((_, b)) if q >= b - TIE_TOLERANCE * (1.0 + b.abs()) => {}
                    _ => best = Some((unit, q)),
                }
            }
            best.expect("non-full mask has a free unit").0
        })
        .expect("greedy choices are free units")
    }

    /// Uniformly random feasible action at every decision state.
    pub fn random<R: Rng + ?Sized>(inst: &Instance, rng: &mut R) -> Self {
        Policy::from_fn(inst, |_, mask| {
            let free: Vec<usize> = mask.free_units(inst.units()).collect();
            free[rng.random_range(0..free.len())]
        })
        .expect("random choices are free units")
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn units(&self) -> usize {
        self.units
    }

    /// The unit dispatched to a call at `node` when `mask` is busy, or
    /// `None` when every unit is busy.
    #[inline]
    pub fn action(&self, node: usize, mask: BusyMask) -> Option<usize> {
        match self.actions[(node << self.units) + mask.index()] {
            NO_ACTION => None,
            unit => Some(unit as usize),
        }
    }

    /// All `(node, mask)` pairs with at least one free unit.
    pub fn decision_states(&self) -> impl Iterator<Item = (usize, BusyMask)> + '_ {
        let full = BusyMask::full(self.units);
        (0..self.nodes)
            .flat_map(move |node| BusyMask::all(self.units).map(move |mask| (node, mask)))
            .filter(move |&(_, mask)| mask != full)
    }

    /// Number of decision states on which two policies disagree.
    pub fn differences(&self, other: &Policy) -> usize {
        assert_eq!(self.actions.len(), other.actions.len(), "policies of different shape");
        self.actions.iter().zip(&other.actions).filter(|(a, b)| a != b).count()
    }

    /// Checks that this policy is total and feasible for `inst`.
    pub fn check_against(&self, inst: &Instance) -> Result<()> {
        if self.nodes != inst.nodes() || self.units != inst.units() {
            return Err(Error::Validation(format!(
                "policy is for J={}, N={} but the instance has J={}, N={}",
                self.nodes,
                self.units,
                inst.nodes(),
                inst.units()
            )));
        }
        Ok(())
    }

    /// Reads a policy file and validates it against `inst`.
    pub fn load(path: impl AsRef<Path>, inst: &Instance) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Policy::from_json(&text, inst)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Policy file encoding: `{"actions": {"<j>,<mask>": unit}}`, with 1-based
    /// node and unit numbers and entries in (node, mask) order.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(&PolicyFileOut(self)).expect("policy encodes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str, inst: &Instance) -> Result<Self> {
        let file: PolicyFileIn = serde_json::from_str(text).map_err(|e| Error::parse("actions", e.to_string()))?;
        let (nodes, units) = (inst.nodes(), inst.units());
        let masks = inst.mask_count();
        let mut actions = vec![NO_ACTION; nodes * masks];
        let full = inst.full_mask();
        for (key, &unit) in &file.actions {
            let field = format!("actions[\"{key}\"]");
            let (node, mask) = key
                .split_once(',')
                .and_then(|(j, m)| Some((j.trim().parse::<usize>().ok()?, m.trim().parse::<u32>().ok()?)))
                .ok_or_else(|| Error::parse(&field, "key must be \"<node>,<mask>\""))?;
            if node == 0 || node > nodes {
                return Err(Error::Validation(format!("{field}: node {node} outside 1..={nodes}")));
            }
            if mask as usize >= masks {
                return Err(Error::Validation(format!(
                    "{field}: mask {mask} does not fit {units} units"
                )));
            }
            let mask = BusyMask(mask);
            if mask == full {
                return Err(Error::Validation(format!("{field}: full mask has no action")));
            }
            if unit == 0 || unit as usize > units || mask.is_busy(unit as usize - 1) {
                return Err(Error::Validation(format!("{field}: unit {unit} is not a free unit")));
            }
            actions[(node - 1) * masks + mask.index()] = (unit - 1) as u8;
        }
        let policy = Policy { nodes, units, actions };
        if let Some((node, mask)) = policy
            .decision_states()
            .find(|&(node, mask)| policy.actions[node * masks + mask.index()] == NO_ACTION)
        {
            return Err(Error::Validation(format!(
                "policy has no action for node {}, mask {mask}",
                node + 1
            )));
        }
        Ok(policy)
    }
}

struct PolicyFileOut<'a>(&'a Policy);

struct ActionsOut<'a>(&'a Policy);

impl Serialize for PolicyFileOut<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(1))?;
        map.serialize_entry("actions", &ActionsOut(self.0))?;
        map.end()
    }
}

impl Serialize for ActionsOut<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let policy = self.0;
        let mut map = serializer.serialize_map(None)?;
        for (node, mask) in policy.decision_states() {
            let unit = policy.action(node, mask).expect("decision state has an action");
            map.serialize_entry(&format!("{},{}", node + 1, mask.0), &(unit + 1))?;
        }
        map.end()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFileIn {
    actions: BTreeMap<String, u64>,
}

/// Closest-available-unit rule: the free unit with the smallest response time
/// to the call, lowest index on ties.
pub fn myopic_policy(inst: &Instance) -> Policy {
    Policy::from_fn(inst, |node, mask| {
        let mut best = None;
        for unit in mask.free_units(inst.units()) {
            let time = inst.response_time(unit, node);
            match best {
                Some((_, t)) if time >= t => {}
                _ => best = Some((unit, time)),
            }
        }
        best.expect("non-full mask has a free unit").0
    })
    .expect("closest unit is free")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instance, GeneratorConfig};

    fn two_units(t1: f64, t2: f64) -> Instance {
        Instance::new(vec![1.0], vec![1.0, 1.0], vec![vec![t1], vec![t2]]).unwrap()
    }

    #[test]
    fn myopic_strict_minimum() {
        let inst = two_units(3.0, 5.0);
        let policy = myopic_policy(&inst);
        assert_eq!(policy.action(0, BusyMask::EMPTY), Some(0));
        assert_eq!(policy.action(0, BusyMask(0b01)), Some(1));
        assert_eq!(policy.action(0, BusyMask(0b10)), Some(0));
        assert_eq!(policy.action(0, BusyMask(0b11)), None);
    }

    #[test]
    fn myopic_tie_goes_to_lowest_index() {
        let inst = two_units(4.0, 4.0);
        assert_eq!(myopic_policy(&inst).action(0, BusyMask::EMPTY), Some(0));
    }

    #[test]
    fn myopic_is_free_argmin_everywhere() {
        for seed in 0..5 {
            let inst = generate_instance(seed, 30, 6, &GeneratorConfig::default()).unwrap();
            let policy = myopic_policy(&inst);
            for (node, mask) in policy.decision_states() {
                let unit = policy.action(node, mask).unwrap();
                assert!(!mask.is_busy(unit));
                let best = mask
                    .free_units(inst.units())
                    .map(|i| inst.response_time(i, node))
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(inst.response_time(unit, node), best);
                // lowest index among the minimisers
                let first = mask
                    .free_units(inst.units())
                    .find(|&i| inst.response_time(i, node) == best)
                    .unwrap();
                assert_eq!(unit, first);
            }
        }
    }

    #[test]
    fn from_fn_rejects_busy_unit() {
        let inst = two_units(1.0, 2.0);
        let err = Policy::from_fn(&inst, |_, _| 0).unwrap_err();
        assert!(matches!(err, Error::InfeasibleAction(_)));
    }

    #[test]
    fn json_round_trip_and_shape() {
        let inst = generate_instance(3, 4, 3, &GeneratorConfig::default()).unwrap();
        let mut rng = rand::rng();
        let policy = Policy::random(&inst, &mut rng);
        let text = policy.to_json();
        assert_eq!(Policy::from_json(&text, &inst).unwrap(), policy);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let actions = value["actions"].as_object().unwrap();
        assert_eq!(actions.len(), 4 * 7);
        assert!(actions.contains_key("1,0"));
        assert!(!actions.contains_key("1,7"));
    }

    #[test]
    fn json_for_wrong_fleet_is_rejected() {
        let small = generate_instance(3, 4, 2, &GeneratorConfig::default()).unwrap();
        let large = generate_instance(3, 4, 3, &GeneratorConfig::default()).unwrap();
        let text = myopic_policy(&large).to_json();
        assert!(matches!(Policy::from_json(&text, &small), Err(Error::Validation(_))));
        let text = myopic_policy(&small).to_json();
        assert!(matches!(Policy::from_json(&text, &large), Err(Error::Validation(_))));
    }

    #[test]
    fn greedy_with_zero_extra_is_myopic() {
        let inst = generate_instance(11, 8, 4, &GeneratorConfig::default()).unwrap();
        let greedy = Policy::greedy(&inst, |node, _, unit| inst.response_time(unit, node));
        assert_eq!(greedy, myopic_policy(&inst));
    }
}
