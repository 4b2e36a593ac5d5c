use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dispatch_core::evaluation::{
    compare_policies, evaluate, write_comparison_csv, CompareSettings, ComparisonRow, MethodChoice, SimConfig,
};
use dispatch_core::exact_mdp::{self, AugmentedState, DENSE_STATE_LIMIT};
use dispatch_core::instance::{generate_instance, load_instance, myopic_policy, GeneratorConfig};
use dispatch_core::post_decision::pd_policy_iteration;
use dispatch_core::td_learner::{td_policy_iteration, write_td_trace_csv, write_values_csv, TdConfig};
use dispatch_core::trace::write_trace_csv;
use dispatch_core::{Error, Instance, Policy, Result};

use crate::output;
use crate::{CompareArgs, EvalArgs, EvalMethodArg, EvalSettings, GenArgs, SolveArgs, SolveMethod, TrainArgs};

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// `myopic`, `random` (when allowed) or a policy file.
fn resolve_policy(spec: &str, inst: &Instance, random_seed: Option<u64>) -> Result<Policy> {
    match (spec, random_seed) {
        ("myopic", _) => Ok(myopic_policy(inst)),
        ("random", Some(seed)) => Ok(Policy::random(inst, &mut ChaCha8Rng::seed_from_u64(seed))),
        (path, _) => Policy::load(path, inst),
    }
}

pub fn gen(args: GenArgs) -> Result<()> {
    let config = GeneratorConfig {
        minutes_per_distance: args.minutes_per_distance,
        turnout: args.turnout,
        target_utilization: (args.utilization > 0.0).then_some(args.utilization),
        ..GeneratorConfig::default()
    };
    if args.utilization < 0.0 {
        return Err(Error::Validation("--utilization must be non-negative".into()));
    }
    let inst = generate_instance(args.seed, args.nodes, args.units, &config)?;
    let path = match args.output {
        Some(path) => path,
        None => {
            let dir = PathBuf::from(std::env::var_os("DISPATCH_OUT_DIR").unwrap_or_else(|| ".".into()));
            prepare_dir(&dir)?;
            dir.join("instance.json")
        }
    };
    output::instance(&path, &inst)?;
    println!(
        "wrote {}: J={} N={} lambda={:.6} sum_mu={:.6} utilization={:.6}",
        path.display(),
        inst.nodes(),
        inst.units(),
        inst.total_arrival_rate(),
        inst.total_service_rate(),
        inst.utilization()
    );
    Ok(())
}

pub fn solve(args: SolveArgs) -> Result<()> {
    let inst = load_instance(&args.instance)?;
    let initial = resolve_policy(&args.init, &inst, None)?;
    let dir = &args.out.out_dir;
    prepare_dir(dir)?;
    let (policy, trace, mu, converged) = match args.method {
        SolveMethod::Exact => {
            let limit = args.max_states.unwrap_or(DENSE_STATE_LIMIT);
            let out = exact_mdp::policy_iteration_with_limit(&inst, initial, args.max_iters, limit)?;
            let rows: Vec<(usize, u32, f64)> = exact_mdp::states(&inst)
                .map(|s: AugmentedState| (s.call.map_or(0, |j| j + 1), s.mask.0, out.values.value(s)))
                .collect();
            output::csv(&dir.join("values.csv"), &["call", "mask", "value"], rows.len(), |buf| {
                let mut w = ::csv::Writer::from_writer(buf);
                w.write_record(["call", "mask", "value"])?;
                for (call, mask, value) in &rows {
                    w.write_record([call.to_string(), mask.to_string(), value.to_string()])?;
                }
                w.flush()?;
                Ok(())
            })?;
            (out.policy, out.trace, out.values.mu, out.converged)
        }
        SolveMethod::Pd => {
            let out = pd_policy_iteration(&inst, initial, args.max_iters)?;
            let values = &out.values.values;
            output::csv(&dir.join("values.csv"), &["mask", "value"], values.len(), |buf| {
                let mut w = ::csv::Writer::from_writer(buf);
                w.write_record(["mask", "value"])?;
                for (mask, value) in values.iter().enumerate() {
                    w.write_record([mask.to_string(), value.to_string()])?;
                }
                w.flush()?;
                Ok(())
            })?;
            (out.policy, out.trace, out.values.mu, out.converged)
        }
    };
    output::policy(&dir.join("policy.json"), &policy, &inst)?;
    output::csv(
        &dir.join("trace.csv"),
        &["iter", "mu", "policy_changes"],
        trace.len(),
        |buf| write_trace_csv(&trace, buf),
    )?;
    println!("mu={} iterations={} converged={converged}", mu, trace.len());
    if !converged {
        eprintln!("warning: stopped at --max-iters before the policy stabilised");
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let inst = load_instance(&args.instance)?;
    let initial = resolve_policy(&args.init, &inst, Some(args.seed))?;
    let config = TdConfig {
        iterations: args.iterations,
        steps: args.steps,
        a: args.a,
        seed: args.seed,
        warm_start: args.warm_start,
    };
    let dir = &args.out.out_dir;
    prepare_dir(dir)?;
    let out = td_policy_iteration(&inst, initial, &config)?;
    output::policy(&dir.join("policy.json"), &out.policy, &inst)?;
    output::csv(
        &dir.join("trace.csv"),
        &["iter", "sample_mean_response", "mu_estimate", "policy_changes"],
        out.trace.len(),
        |buf| write_td_trace_csv(&out.trace, buf),
    )?;
    output::csv(&dir.join("values.csv"), &["mask", "r_value"], out.values.len(), |buf| {
        write_values_csv(&out.values, buf)
    })?;
    let last = out.trace.last().expect("at least one iteration");
    println!(
        "iterations={} last_sample_mean_response={} last_mu_estimate={}",
        out.trace.len(),
        last.sample_mean_response,
        last.mu_estimate
    );
    Ok(())
}

fn settings(args: &EvalSettings) -> CompareSettings {
    CompareSettings {
        method: match args.method {
            EvalMethodArg::Auto => MethodChoice::Auto,
            EvalMethodArg::Exact => MethodChoice::Exact,
            EvalMethodArg::Sim => MethodChoice::Simulated,
        },
        exact_max_units: args.exact_max_units,
        sim: SimConfig {
            calls: args.calls,
            replications: args.reps,
            seed: args.seed,
        },
    }
}

const REPORT_HEADER: [&str; 5] = [
    "policy_name",
    "method",
    "mean_response",
    "loss_fraction",
    "ci_halfwidth",
];

fn emit_report(rows: &[ComparisonRow], path: Option<&Path>) -> Result<()> {
    match path {
        Some(path) => output::csv(path, &REPORT_HEADER, rows.len(), |buf| write_comparison_csv(rows, buf)),
        None => {
            let mut buf = Vec::new();
            write_comparison_csv(rows, &mut buf)?;
            io::stdout().write_all(&buf)?;
            Ok(())
        }
    }
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let inst = load_instance(&args.instance)?;
    let policy = resolve_policy(&args.policy, &inst, None)?;
    let report = evaluate(&inst, &policy, &settings(&args.settings))?;
    let rows = [ComparisonRow {
        policy_name: args.policy.clone(),
        report,
    }];
    emit_report(&rows, args.settings.output.as_deref())
}

pub fn compare(args: CompareArgs) -> Result<()> {
    let inst = load_instance(&args.instance)?;
    let policies = args
        .policies
        .iter()
        .map(|spec| Ok((spec.clone(), resolve_policy(spec, &inst, None)?)))
        .collect::<Result<Vec<_>>>()?;
    let rows = compare_policies(&inst, &policies, &settings(&args.settings))?;
    emit_report(&rows, args.settings.output.as_deref())
}
