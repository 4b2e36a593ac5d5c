//! Policy quality: exact hypercube analysis and discrete-event simulation.
//!
//! Calls that find every unit busy count towards the loss fraction only;
//! mean response times are per served call.

mod hypercube;
mod simulate;

pub use hypercube::{balance_residual, hypercube_stationary, mean_response_time_exact, HYPERCUBE_UNIT_LIMIT};
pub use simulate::{simulate, SimConfig, WARMUP_FRACTION};

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Instance, Policy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMethod {
    Exact,
    Simulated,
}

impl fmt::Display for EvalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMethod::Exact => "exact",
            EvalMethod::Simulated => "simulated",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: EvalMethod,
    /// Mean response time per served call.
    pub mean_response_time: f64,
    /// Fraction of calls arriving while every unit is busy.
    pub loss_fraction: f64,
    /// Long-run busy probability of each unit.
    pub utilization: Vec<f64>,
    /// 95% confidence half-width of the mean; simulated reports only.
    pub ci_halfwidth: Option<f64>,
    pub served_calls: Option<u64>,
    pub replications: Option<usize>,
}

/// How to evaluate a policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MethodChoice {
    /// Exact when the fleet is at most `exact_max_units`, otherwise simulated.
    #[default]
    Auto,
    Exact,
    Simulated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareSettings {
    pub method: MethodChoice,
    pub exact_max_units: usize,
    pub sim: SimConfig,
}

impl Default for CompareSettings {
    fn default() -> Self {
        CompareSettings {
            method: MethodChoice::Auto,
            exact_max_units: 12,
            sim: SimConfig::default(),
        }
    }
}

pub fn evaluate(inst: &Instance, policy: &Policy, settings: &CompareSettings) -> Result<EvalReport> {
    let exact = match settings.method {
        MethodChoice::Auto => inst.units() <= settings.exact_max_units,
        MethodChoice::Exact => true,
        MethodChoice::Simulated => false,
    };
    if exact {
        mean_response_time_exact(inst, policy)
    } else {
        simulate(inst, policy, &settings.sim)
    }
}

/// One row of a policy comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub policy_name: String,
    pub report: EvalReport,
}

/// Evaluates every named policy with the same settings (and, when
/// simulating, the same seed).
pub fn compare_policies(
    inst: &Instance,
    policies: &[(String, Policy)],
    settings: &CompareSettings,
) -> Result<Vec<ComparisonRow>> {
    if policies.len() < 2 {
        return Err(Error::Validation("comparison needs at least two policies".into()));
    }
    policies
        .iter()
        .map(|(name, policy)| {
            Ok(ComparisonRow {
                policy_name: name.clone(),
                report: evaluate(inst, policy, settings)?,
            })
        })
        .collect()
}

/// CSV columns: `policy_name,method,mean_response,loss_fraction,ci_halfwidth`;
/// the half-width is empty for exact rows.
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record([
        "policy_name",
        "method",
        "mean_response",
        "loss_fraction",
        "ci_halfwidth",
    ])?;
    for row in rows {
        let r = &row.report;
        writer.write_record([
            row.policy_name.clone(),
            r.method.to_string(),
            r.mean_response_time.to_string(),
            r.loss_fraction.to_string(),
            r.ci_halfwidth.map(|h| h.to_string()).unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instance, myopic_policy, GeneratorConfig};

    #[test]
    fn identical_policies_identical_rows() {
        let inst = generate_instance(2, 8, 3, &GeneratorConfig::default()).unwrap();
        let p = myopic_policy(&inst);
        let rows = compare_policies(
            &inst,
            &[("a".into(), p.clone()), ("b".into(), p)],
            &CompareSettings::default(),
        )
        .unwrap();
        assert_eq!(rows[0].report, rows[1].report);
        let mut out = Vec::new();
        write_comparison_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("policy_name,method,mean_response,loss_fraction,ci_halfwidth\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn needs_two_policies() {
        let inst = generate_instance(2, 8, 3, &GeneratorConfig::default()).unwrap();
        let err = compare_policies(
            &inst,
            &[("m".into(), myopic_policy(&inst))],
            &CompareSettings::default(),
        );
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn auto_switches_to_simulation_for_large_fleets() {
        let inst = generate_instance(2, 8, 4, &GeneratorConfig::default()).unwrap();
        let settings = CompareSettings {
            exact_max_units: 3,
            sim: SimConfig {
                calls: 2_000,
                replications: 2,
                seed: 0,
            },
            ..CompareSettings::default()
        };
        let report = evaluate(&inst, &myopic_policy(&inst), &settings).unwrap();
        assert_eq!(report.method, EvalMethod::Simulated);
        assert!(report.ci_halfwidth.is_some());
    }
}
