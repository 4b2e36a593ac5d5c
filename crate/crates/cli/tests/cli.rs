use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dispatch(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dispatch"))
        .args(args)
        .current_dir(dir)
        .env_remove("DISPATCH_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dispatch(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gen(dir: &Path, nodes: &str, units: &str, name: &str) {
    ok(
        dir,
        &["gen", "--seed", "3", "--nodes", nodes, "--units", units, "-o", name],
    );
}

#[test]
fn invalid_fleet_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dispatch(dir.path(), &["gen", "--nodes", "4", "--units", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oversized_exact_solve_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "30", "15", "big.json");
    let out = dispatch(dir.path(), &["solve", "-i", "big.json", "--method", "exact"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train"));
}

#[test]
fn exact_and_post_decision_solvers_agree() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "6", "3", "inst.json");
    let mu = |method: &str| -> f64 {
        let text = ok(
            dir.path(),
            &["solve", "-i", "inst.json", "--method", method, "-o", method],
        );
        text.split_whitespace()
            .find_map(|w| w.strip_prefix("mu="))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!((mu("exact") - mu("pd")).abs() <= 1e-9);
    let exact = fs::read_to_string(dir.path().join("exact/policy.json")).unwrap();
    let pd = fs::read_to_string(dir.path().join("pd/policy.json")).unwrap();
    assert_eq!(exact, pd);
}

#[test]
fn default_output_directory_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dispatch"))
        .args(["gen", "--nodes", "3", "--units", "2"])
        .current_dir(dir.path())
        .env("DISPATCH_OUT_DIR", "nested/out")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("nested/out/instance.json").exists());
}

#[test]
fn policy_for_another_fleet_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "4", "2", "small.json");
    gen(dir.path(), "4", "3", "large.json");
    ok(
        dir.path(),
        &["solve", "-i", "small.json", "--method", "pd", "-o", "small"],
    );
    let out = dispatch(dir.path(), &["eval", "-i", "large.json", "-p", "small/policy.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulated_report_has_confidence_interval() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "5", "3", "inst.json");
    let text = ok(
        dir.path(),
        &[
            "eval",
            "-i",
            "inst.json",
            "--method",
            "sim",
            "--calls",
            "20000",
            "--reps",
            "4",
        ],
    );
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let row = reader.records().next().unwrap().unwrap();
    assert_eq!(&row[0], "myopic");
    assert_eq!(&row[1], "simulated");
    assert!(row[4].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn repeated_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for run in ["a", "b"] {
        gen(d, "6", "3", &format!("{run}.json"));
        ok(
            d,
            &[
                "train",
                "-i",
                &format!("{run}.json"),
                "-K",
                "3",
                "-T",
                "20000",
                "--seed",
                "4",
                "-o",
                run,
            ],
        );
        ok(
            d,
            &[
                "compare",
                "-i",
                &format!("{run}.json"),
                "-p",
                "myopic",
                "-p",
                &format!("{run}/policy.json"),
                "--method",
                "sim",
                "--calls",
                "5000",
                "--reps",
                "2",
                "-o",
                &format!("{run}/report.csv"),
            ],
        );
    }
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("b.json")).unwrap());
    for file in ["policy.json", "trace.csv", "values.csv"] {
        assert_eq!(
            fs::read(d.join("a").join(file)).unwrap(),
            fs::read(d.join("b").join(file)).unwrap(),
            "{file}"
        );
    }
    let report = |run: &str| {
        fs::read_to_string(d.join(run).join("report.csv"))
            .unwrap()
            .replace(&format!("{run}/"), "")
    };
    assert_eq!(report("a"), report("b"));
}
